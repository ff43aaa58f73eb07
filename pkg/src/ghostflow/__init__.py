"""Solvers and a verification harness for the low-Mach expansion of steady compressible channel flow."""
