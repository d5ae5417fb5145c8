# Test package for regx
