"""FOCAL: heterogeneous graph neural network with coverage and anchor branches, plus a theorem lab."""
