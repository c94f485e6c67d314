#!/usr/bin/env python
"""
Point d'entrée principal ConDA-TTA
"""

import sys
from pathlib import Path

# Ajouter le répertoire racine au PYTHONPATH
sys.path.insert(0, str(Path(__file__).parent))

from src.cli import main


if __name__ == "__main__":
    sys.exit(main())
