"""
Module de configuration du pipeline ConDA-TTA
"""
