# This file makes the 'asmplan' directory a Python package.
