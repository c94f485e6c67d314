"""
Module de logging pour le pipeline ConDA-TTA
"""

import json
import logging
import sys
from typing import Any, Dict, Optional

from colorama import Fore, Style
from pythonjsonlogger import jsonlogger

# Configuration du logger
logger = logging.getLogger('ConDA-TTA')
logger.setLevel(logging.INFO)
logger.propagate = False


class ColoredFormatter(logging.Formatter):
    """Formatter qui ajoute des couleurs aux logs"""

    COLORS = {
        'DEBUG': Fore.CYAN,
        'INFO': Fore.GREEN,
        'WARNING': Fore.YELLOW,
        'ERROR': Fore.RED,
        'CRITICAL': Fore.MAGENTA,
    }

    def format(self, record):
        color = self.COLORS.get(record.levelname, '')
        # Copie pour ne pas polluer les autres handlers (fichier JSON)
        record = logging.makeLogRecord(record.__dict__)
        record.levelname = f"{color}{record.levelname}{Style.RESET_ALL}"
        return super().format(record)


# S'assurer que le logger n'a pas de handlers dupliqués
if not logger.handlers:
    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setLevel(logging.DEBUG)
    console_handler.setFormatter(
        ColoredFormatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s')
    )
    logger.addHandler(console_handler)


def configure_logging(level: str = 'INFO', json_file: Optional[str] = None) -> None:
    """
    Ajuste le niveau de log et ajoute éventuellement un fichier JSON-lines

    Args:
        level: Niveau (DEBUG, INFO, WARNING, ERROR)
        json_file: Chemin du fichier de logs structurés
    """
    logger.setLevel(getattr(logging, level.upper(), logging.INFO))

    if json_file:
        for handler in list(logger.handlers):
            if isinstance(handler, logging.FileHandler):
                logger.removeHandler(handler)
                handler.close()
        file_handler = logging.FileHandler(json_file, encoding='utf-8')
        file_handler.setFormatter(
            jsonlogger.JsonFormatter('%(asctime)s %(name)s %(levelname)s %(message)s')
        )
        logger.addHandler(file_handler)


def _with_context(message: str, kwargs: Dict[str, Any]) -> str:
    if kwargs:
        message = f"{message} | {json.dumps(kwargs, default=str)}"
    return message


def log_info(message: str, **kwargs):
    """Log un message de niveau INFO"""
    logger.info(_with_context(message, kwargs))


def log_error(message: str, **kwargs):
    """Log un message de niveau ERROR"""
    logger.error(_with_context(message, kwargs))


def log_debug(message: str, **kwargs):
    """Log un message de niveau DEBUG"""
    logger.debug(_with_context(message, kwargs))


def log_warning(message: str, **kwargs):
    """Log un message de niveau WARNING"""
    logger.warning(_with_context(message, kwargs))


def log_critical(message: str, **kwargs):
    """Log un message de niveau CRITICAL"""
    logger.critical(_with_context(message, kwargs))


def log_epoch(entry: Dict[str, float]):
    """
    Log une ligne de suivi d'entraînement

    Args:
        entry: Composantes de la perte pour une époque (voir TrainTrace)
    """
    message_parts = [f"📈 EPOCH {int(entry['epoch'])}:"]

    for key, label in (('total', 'Total'), ('ce_source', 'CE'),
                       ('ce_source_aug', 'CE+'), ('ctr_source', 'Ctr S'),
                       ('ctr_target', 'Ctr T'), ('mmd', 'MMD'),
                       ('val_ce', 'Val CE')):
        if key in entry:
            message_parts.append(f"{label}: {entry[key]:.4f}")

    logger.info(" | ".join(message_parts))


def log_report(metrics: Dict[str, Any]):
    """
    Log les métriques d'évaluation

    Args:
        metrics: Dictionnaire contenant au moins accuracy et f1
    """
    message_parts = ["📊 EVALUATION:"]

    if 'total' in metrics:
        message_parts.append(f"Items: {metrics['total']}")
    if 'accuracy' in metrics:
        message_parts.append(f"Acc: {metrics['accuracy'] * 100:.2f}%")
    if 'f1' in metrics:
        message_parts.append(f"F1: {metrics['f1'] * 100:.2f}%")

    logger.info(" | ".join(message_parts))
