"""Utility functions"""

from .exports import (
    config_hash,
    format_table,
    read_table,
    render_config,
    write_json,
    write_table
)

__all__ = [
    'config_hash',
    'format_table',
    'read_table',
    'render_config',
    'write_json',
    'write_table'
]
