"""
Sauvegarde et chargement des checkpoints du modèle

Document JSON auto-descriptif; chaque tableau est stocké en base64 de ses
octets float64 little-endian, ce qui rend l'aller-retour exact au bit près
et la sortie identique octet par octet pour un même modèle.
"""

import base64
import json
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from .exceptions import SchemaError
from .model import BatchNormState, LinearLayer, ModelConfig, ModelState
from .numeric import SeededRng

CHECKPOINT_FORMAT = 'conda-tta-checkpoint'
CHECKPOINT_VERSION = 1


def _encode_array(arr: np.ndarray) -> Dict[str, Any]:
    data = np.ascontiguousarray(arr, dtype='<f8').tobytes()
    return {'shape': list(arr.shape), 'dtype': '<f8', 'data': base64.b64encode(data).decode('ascii')}


def _decode_array(payload: Dict[str, Any]) -> np.ndarray:
    raw = base64.b64decode(payload['data'])
    arr = np.frombuffer(raw, dtype=payload.get('dtype', '<f8')).astype(np.float64)
    return arr.reshape(payload['shape'])


def _encode_rng(rng: SeededRng) -> Dict[str, Any]:
    state = rng.generator.bit_generator.state
    return {
        'seed': rng.seed,
        'entropy': [int(e) for e in rng._entropy],
        'counter': [int(c) for c in state['state']['counter']],
        'key': [int(k) for k in state['state']['key']],
        'buffer': [int(b) for b in state['buffer']],
        'buffer_pos': int(state['buffer_pos']),
        'has_uint32': int(state['has_uint32']),
        'uinteger': int(state['uinteger']),
    }


def _decode_rng(payload: Dict[str, Any]) -> SeededRng:
    rng = SeededRng(payload['seed'], _entropy=list(payload['entropy']))
    bit_gen = rng.generator.bit_generator
    state = bit_gen.state
    state['state']['counter'] = np.array(payload['counter'], dtype=np.uint64)
    state['state']['key'] = np.array(payload['key'], dtype=np.uint64)
    state['buffer'] = np.array(payload['buffer'], dtype=np.uint64)
    state['buffer_pos'] = payload['buffer_pos']
    state['has_uint32'] = payload['has_uint32']
    state['uinteger'] = payload['uinteger']
    bit_gen.state = state
    return rng


def checkpoint_to_dict(model: ModelState, metadata: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """Représentation sérialisable complète du modèle"""
    layers = {
        name: {'weight': _encode_array(layer.weight), 'bias': _encode_array(layer.bias)}
        for name, layer in model.linear_layers().items()
    }
    bns = {
        name: {
            'gamma': _encode_array(bn.gamma),
            'beta': _encode_array(bn.beta),
            'running_mean': _encode_array(bn.running_mean),
            'running_var': _encode_array(bn.running_var),
            'momentum': float(bn.momentum).hex(),
            'eps': float(bn.eps).hex(),
            'mode': bn.mode,
            'num_batches_tracked': bn.num_batches_tracked,
        }
        for name, bn in model.bn_layers().items()
    }
    config = asdict(model.config)
    config_hex = {k: float(v).hex() if isinstance(v, float) else v for k, v in config.items()}
    return {
        'format': CHECKPOINT_FORMAT,
        'version': CHECKPOINT_VERSION,
        'seed': model.seed,
        'mode': model.mode,
        'model_config': config_hex,
        'linear_layers': layers,
        'batch_norm': bns,
        'dropout_rng': _encode_rng(model.rng),
        'metadata': metadata or {},
    }


def checkpoint_from_dict(doc: Dict[str, Any]) -> ModelState:
    """Reconstruit un ModelState depuis checkpoint_to_dict"""
    if doc.get('format') != CHECKPOINT_FORMAT:
        raise SchemaError(f"format de checkpoint inconnu: {doc.get('format')!r}")
    if doc.get('version') != CHECKPOINT_VERSION:
        raise SchemaError(f"version de checkpoint non supportée: {doc.get('version')!r}")

    try:
        raw_config = doc['model_config']
        config = ModelConfig(**{
            k: float.fromhex(v) if isinstance(v, str) else v for k, v in raw_config.items()
        })

        layers = {
            name: LinearLayer(weight=_decode_array(p['weight']), bias=_decode_array(p['bias']))
            for name, p in doc['linear_layers'].items()
        }
        bns = {
            name: BatchNormState(
                gamma=_decode_array(p['gamma']),
                beta=_decode_array(p['beta']),
                running_mean=_decode_array(p['running_mean']),
                running_var=_decode_array(p['running_var']),
                momentum=float.fromhex(p['momentum']),
                eps=float.fromhex(p['eps']),
                mode=p['mode'],
                num_batches_tracked=int(p['num_batches_tracked']),
            )
            for name, p in doc['batch_norm'].items()
        }
        return ModelState(
            config=config,
            proj1=layers['proj1'], proj2=layers['proj2'],
            cls1=layers['cls1'], cls2=layers['cls2'], cls3=layers['cls3'],
            bn1=bns['bn1'], bn2=bns['bn2'],
            rng=_decode_rng(doc['dropout_rng']),
            seed=int(doc['seed']),
            mode=doc.get('mode', 'train'),
        )
    except KeyError as e:
        raise SchemaError(f"checkpoint incomplet: clé manquante {e}")


def save_checkpoint(model: ModelState, path: Union[str, Path],
                    metadata: Optional[Dict[str, Any]] = None) -> Path:
    """
    Écrit le checkpoint sur disque

    Args:
        model: Modèle à sauvegarder
        path: Fichier de destination
        metadata: Informations d'exécution (config, graine)

    Returns:
        Chemin écrit
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = checkpoint_to_dict(model, metadata)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(doc, f, sort_keys=True, indent=1)
        f.write('\n')
    return path


def load_checkpoint(path: Union[str, Path]) -> ModelState:
    """Charge un checkpoint écrit par save_checkpoint"""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint non trouvé: {path}")
    with open(path, 'r', encoding='utf-8') as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise SchemaError(f"checkpoint illisible: {path}: {e}")
    return checkpoint_from_dict(doc)


def load_checkpoint_metadata(path: Union[str, Path]) -> Dict[str, Any]:
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f).get('metadata', {})
