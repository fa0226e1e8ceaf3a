"""
Data module for the microgrid instance
Embedded generation/demand levels and their Markov transition matrices
"""

# Renewable generation levels (rows/columns of generation_transition, top to bottom)
generation_levels = [0.0, 0.6, 1.2, 1.8, 2.4, 3.0]

# Demand levels (rows/columns of demand_transition)
demand_levels = [0.6, 1.2, 1.8, 2.4, 3.0, 3.6]

# P_g(g' | g), estimated from wind-speed measurements
generation_transition = [
    [0.939, 0.051, 0.006, 0.002, 0.001, 0.001],
    [0.400, 0.443, 0.103, 0.029, 0.011, 0.014],
    [0.157, 0.373, 0.260, 0.115, 0.045, 0.050],
    [0.079, 0.240, 0.250, 0.192, 0.104, 0.135],
    [0.078, 0.139, 0.183, 0.192, 0.140, 0.268],
    [0.042, 0.074, 0.081, 0.099, 0.095, 0.609],
]

# P_d(d' | d), estimated from hourly load data
demand_transition = [
    [0.751, 0.249, 0.000, 0.000, 0.000, 0.000],
    [0.031, 0.834, 0.135, 0.000, 0.000, 0.000],
    [0.000, 0.107, 0.819, 0.074, 0.000, 0.000],
    [0.000, 0.000, 0.139, 0.838, 0.023, 0.000],
    [0.000, 0.000, 0.000, 0.189, 0.794, 0.017],
    [0.000, 0.000, 0.000, 0.000, 0.267, 0.733],
]

# Storage and converter limits
storage_limits = {'min': 0.4, 'max': 3.4}
max_power = 1.2
resolution = 0.1
num_actions = 25

# VaR levels reported for the dispatch study, alpha -> optimal steady-state VaR
reference_optima = {0.9: 0.6, 0.5: -0.6, 0.1: -1.6}
