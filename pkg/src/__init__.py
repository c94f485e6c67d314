"""
ConDA-TTA - Adaptation de domaine contrastive avec adaptation au moment du test
pour la détection d'articles hors contexte
"""

__version__ = "1.0.0"
