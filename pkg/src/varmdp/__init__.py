"""
varmdp - Value-at-Risk optimization for finite Markov decision processes
Keep minimal to avoid circular imports.
"""
__version__ = '1.0.0'
