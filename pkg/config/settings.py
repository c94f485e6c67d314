"""
Module de configuration du pipeline ConDA-TTA

Fichier texte key=value (lu avec python-dotenv), surcharges par variables
d'environnement CONDA_TTA_<CLÉ> puis par les options de ligne de commande.
Précédence: défauts < fichier < environnement < ligne de commande.
"""

import os
from dataclasses import fields, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

from dotenv import dotenv_values

from src.core.exceptions import ParameterError
from src.core.losses import LossWeights, SigmaPolicy
from src.core.trainer import TrainConfig
from src.utils.exports import config_hash, render_config

ENV_PREFIX = 'CONDA_TTA_'
DEFAULT_CONFIG_PATH = Path(__file__).parent / 'default.conf'
BENCHMARK_CONFIG_PATH = Path(__file__).parent / 'benchmark.conf'

_WEIGHT_KEYS = {
    'lambda_ce': 'lambda_ce',
    'lambda_ctr': 'lambda_ctr',
    'lambda_mmd': 'lambda_mmd',
    'temperature': 'temperature_t',
    'sigma': 'sigma',
    'contrastive_reduction': 'contrastive_reduction',
}
_TRUE = {'1', 'true', 'yes', 'on'}
_FALSE = {'0', 'false', 'no', 'off'}


def default_config() -> Dict[str, Any]:
    """Configuration par défaut, à plat"""
    return TrainConfig().to_flat_dict()


def _coerce(key: str, value: Any, reference: Any) -> Any:
    if key == 'sigma':
        return str(SigmaPolicy.parse(value))
    if not isinstance(value, str):
        return value
    text = value.strip()
    try:
        if isinstance(reference, bool):
            if text.lower() in _TRUE:
                return True
            if text.lower() in _FALSE:
                return False
            raise ValueError(text)
        if isinstance(reference, int):
            return int(text)
        if isinstance(reference, float):
            return float(text)
    except ValueError:
        raise ParameterError(f"valeur invalide pour {key}: {value!r}")
    return text


def _merge(flat: Dict[str, Any], source: Mapping[str, Any], origin: str) -> None:
    for key, value in source.items():
        key = key.strip().lower()
        if key not in flat:
            raise ParameterError(f"clé de configuration inconnue ({origin}): {key}")
        if value is None:
            continue
        flat[key] = _coerce(key, value, flat[key])


def build_config(flat: Mapping[str, Any]) -> TrainConfig:
    """TrainConfig depuis un dictionnaire à plat"""
    train_keys = {f.name for f in fields(TrainConfig)} - {'loss_weights'}
    weights = LossWeights(**{
        attr: SigmaPolicy.parse(flat[key]) if key == 'sigma' else flat[key]
        for key, attr in _WEIGHT_KEYS.items() if key in flat
    })
    kwargs = {k: v for k, v in flat.items() if k in train_keys}
    return replace(TrainConfig(**kwargs), loss_weights=weights)


def load_config(config_path: Optional[Union[str, Path]] = None,
                overrides: Optional[Mapping[str, Any]] = None,
                environ: Optional[Mapping[str, str]] = None) -> TrainConfig:
    """
    Charge la configuration résolue

    Args:
        config_path: Fichier key=value (défaut: config/default.conf s'il existe)
        overrides: Valeurs de la ligne de commande (None = non fournie)
        environ: Variables d'environnement (défaut: os.environ)

    Returns:
        TrainConfig validée
    """
    flat = default_config()

    if config_path is not None:
        path = Path(config_path)
        if not path.exists():
            raise FileNotFoundError(f"Fichier de configuration non trouvé: {path}")
        _merge(flat, dotenv_values(path), str(path))
    elif DEFAULT_CONFIG_PATH.exists():
        _merge(flat, dotenv_values(DEFAULT_CONFIG_PATH), str(DEFAULT_CONFIG_PATH))

    environ = os.environ if environ is None else environ
    env_values = {
        name[len(ENV_PREFIX):].lower(): value
        for name, value in environ.items() if name.startswith(ENV_PREFIX)
    }
    _merge(flat, env_values, 'environnement')

    if overrides:
        _merge(flat, overrides, 'ligne de commande')

    cfg = build_config(flat)
    validate_config(cfg.to_flat_dict())
    return cfg


def validate_config(config: Mapping[str, Any]) -> bool:
    """
    Valide une configuration à plat

    Args:
        config: Dictionnaire de configuration

    Returns:
        True si la configuration est valide
    """
    expected = set(default_config())
    missing = expected - set(config)
    if missing:
        raise ParameterError(f"Clés manquantes dans la configuration: {sorted(missing)}")
    unknown = set(config) - expected
    if unknown:
        raise ParameterError(f"Clés inconnues dans la configuration: {sorted(unknown)}")
    if not 0.0 <= config['target_test_fraction'] <= 1.0:
        raise ParameterError("target_test_fraction doit être dans [0, 1]")
    build_config(config)
    return True


def save_resolved_config(cfg: TrainConfig, path: Union[str, Path]) -> Path:
    """Écrit la configuration résolue, relisible par load_config"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render_config(cfg.to_flat_dict()), encoding='utf-8')
    return path


def fingerprint(cfg: TrainConfig) -> str:
    return config_hash(cfg.to_flat_dict())
