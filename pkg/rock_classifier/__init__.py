'''
Rock type classification from Raman spectra.

Mineral identification with a small 1D convolutional network (and its Monte
Carlo dropout variant) followed by a weighted, dual-threshold expert system
that deduces the rock type from the mineral assemblage.
'''
__version__ = '1.0.0'
