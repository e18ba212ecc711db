# This file is automatically generated by setuptools_scm
version = "unknown"
