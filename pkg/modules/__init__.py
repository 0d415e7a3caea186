"""
Heavy-tailed kinetic models, their scaling regimes and diffusion limits
"""
