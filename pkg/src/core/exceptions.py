"""
Hiérarchie d'exceptions du pipeline ConDA-TTA

Chaque classe dérive aussi du builtin le plus proche pour que les appelants
puissent continuer à attraper ValueError / RuntimeError.
"""

from typing import Any, Dict, Optional


class CondaError(Exception):
    """Erreur de base du projet"""


class ShapeError(CondaError, ValueError):
    """Dimensions incompatibles"""


class ParameterError(CondaError, ValueError):
    """Paramètre hors de son domaine de validité"""


class NumericError(CondaError, ArithmeticError):
    """Valeur non finie ou calcul indéfini"""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class StateError(CondaError, RuntimeError):
    """Opération appelée dans un état du modèle qui ne la permet pas"""


class DataError(CondaError, ValueError):
    """Données absentes ou incohérentes"""


class ParseError(DataError):
    """Ligne illisible dans un fichier d'embeddings"""

    def __init__(self, message: str, line_number: int):
        super().__init__(f"ligne {line_number}: {message}")
        self.line_number = line_number


class SchemaError(DataError):
    """Fichier lisible mais incohérent (dimension, identifiants)"""
