"""
Optimiseur Adam avec correction de biais
"""

from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional

import numpy as np

from .exceptions import ParameterError, ShapeError


@dataclass
class AdamState:
    """Moments d'ordre 1 et 2 par paramètre"""
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.lr > 0:
            raise ParameterError(f"learning rate doit être > 0, reçu {self.lr}")


def adam_step(opt: AdamState, params: Mapping[str, np.ndarray],
              grads: Mapping[str, np.ndarray], lr: Optional[float] = None) -> Mapping[str, np.ndarray]:
    """
    Applique un pas d'Adam en place

    Args:
        opt: État de l'optimiseur (moments, compteur)
        params: Paramètres nommés, modifiés en place
        grads: Gradients de mêmes noms et formes
        lr: Learning rate (défaut: opt.lr)

    Returns:
        Les paramètres mis à jour
    """
    lr = opt.lr if lr is None else lr
    if not lr > 0:
        raise ParameterError(f"learning rate doit être > 0, reçu {lr}")

    for name, param in params.items():
        if name not in grads:
            raise ShapeError(f"gradient manquant pour {name}")
        if np.shape(grads[name]) != np.shape(param):
            raise ShapeError(f"{name}: gradient {np.shape(grads[name])} pour paramètre {np.shape(param)}")
        if name in opt.m and opt.m[name].shape != np.shape(param):
            raise ShapeError(f"{name}: moments {opt.m[name].shape} pour paramètre {np.shape(param)}")

    opt.step_count += 1
    bc1 = 1.0 - opt.beta1 ** opt.step_count
    bc2 = 1.0 - opt.beta2 ** opt.step_count

    for name, param in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if name not in opt.m:
            opt.m[name] = np.zeros_like(param, dtype=np.float64)
            opt.v[name] = np.zeros_like(param, dtype=np.float64)

        opt.m[name] *= opt.beta1
        opt.m[name] += (1.0 - opt.beta1) * g
        opt.v[name] *= opt.beta2
        opt.v[name] += (1.0 - opt.beta2) * (g * g)

        m_hat = opt.m[name] / bc1
        v_hat = opt.v[name] / bc2
        param -= lr * m_hat / (np.sqrt(v_hat) + opt.epsilon)

    return params
