"""Team decision problems with delayed information sharing."""
