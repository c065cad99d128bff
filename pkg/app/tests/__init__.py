"""PCLab test suite."""
