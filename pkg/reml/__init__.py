"""
Restricted maximum likelihood estimation of variance components in linear
mixed models.
"""
