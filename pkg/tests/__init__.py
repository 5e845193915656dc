# Test package initialization file 