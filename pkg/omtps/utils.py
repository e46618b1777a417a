"""
Utility and helper functions for tensors, configuration dictionaries and artifact persistence.
"""
import dataclasses
import functools
import hashlib
import json
import logging
import numbers
import os
import pathlib

import numpy as np
import pandas as pd
import torch

from .exceptions import ConfigError, StaleArtifactError

logger = logging.getLogger(__name__)

DTYPE = torch.float64

# enough significant digits for a float64 to survive a trip through text unchanged
CSV_FLOAT_FORMAT = '%.17g'

MANIFEST_NAME = 'manifest.json'


def as_tensor(values):
    """
    Convert an array-like to a float64 tensor, without copying tensors that already qualify.

    Parameters
    ----------
    values : array-like or torch.Tensor

    Returns
    -------
    tensor : torch.Tensor
        float64 tensor on the CPU
    """
    if isinstance(values, torch.Tensor):
        return values.to(DTYPE)
    return torch.as_tensor(np.asarray(values, dtype=np.float64), dtype=DTYPE)


def as_array(values):
    """Detach a tensor (or pass through an array-like) and return a float64 numpy array."""
    if isinstance(values, torch.Tensor):
        return values.detach().cpu().numpy().astype(np.float64)
    return np.asarray(values, dtype=np.float64)


def check_finite(values):
    """Return True if every entry of a tensor or array is finite."""
    if isinstance(values, torch.Tensor):
        return bool(torch.isfinite(values).all())
    return bool(np.isfinite(values).all())


def get_nested_dict_item(input_dict, keys, allow_missing_keys=False, default=None):
    """
    Given a dictionary with potentially many nested dictionaries, get the value of one of the nested
    keys by providing the sequence of keys as arguments.

    Parameters
    ----------
    input_dict: dict
        The dictionary, typically a parsed run configuration
    keys: list of str
        The sequence of keys to traverse along the heirarchy of the dictionary
    allow_missing_keys: bool, optional
        Allow traversing along missing keys? If so, this acts like the multi-level equivalent of the
        `get()` function for a dictionary, returning a default value. If this argument is not set,
        or set to False, then a ConfigError naming the dotted key path is raised if the path does
        not exist.
    default: optional
        If `allow_missing_keys` is set to True, and the path of keys does not exist in the
        dictionary, then it returns this value.

    Examples
    ----------
    >>> config = dict(simulate=dict(sim=dict(n_steps=1000)))
    >>> get_nested_dict_item(config, ["simulate", "sim", "n_steps"])
    1000
    >>> get_nested_dict_item(config, ["train", "epochs"], allow_missing_keys=True, default=10)
    10
    """
    if allow_missing_keys:
        return functools.reduce(
            lambda d, key: d.get(key, default)
            if isinstance(d, dict) else default, keys, input_dict)
    try:
        return functools.reduce(lambda d, key: d[key], keys, input_dict)
    except (KeyError, TypeError):
        raise ConfigError('required field is missing', field='.'.join(keys)) from None


def check_keys(values, allowed, required=(), section=None):
    """
    Enforce a strict schema on a configuration dictionary.

    Parameters
    ----------
    values : dict
        Configuration section to check
    allowed : iterable of str
        Every key that may appear
    required : iterable of str, optional
        Keys that must appear
    section : str, optional
        Dotted prefix used in error messages

    Raises
    ------
    ConfigError
        If `values` is not a dict, holds an unknown key or misses a required one
    """
    prefix = f'{section}.' if section else ''
    if not isinstance(values, dict):
        raise ConfigError('expected a JSON object', field=section or 'config')
    unknown = sorted(set(values) - set(allowed))
    if unknown:
        raise ConfigError('unknown field', field=prefix + unknown[0])
    missing = [key for key in required if key not in values]
    if missing:
        raise ConfigError('required field is missing', field=prefix + missing[0])


def write_json(file_path, obj):
    """Writes a dictionary object to a JSON file."""
    with open(file_path, 'w') as f:
        json.dump(obj, f, indent=4, sort_keys=True)


def read_json(file_path):
    """Reads a JSON file to a dictionary object."""
    with open(file_path, 'r') as f:
        return json.load(f)


def config_digest(config):
    """sha256 of the canonical JSON rendering of a dictionary."""
    canonical = json.dumps(config, sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


def file_digest(file_path):
    """sha256 of a file's bytes."""
    sha = hashlib.sha256()
    with open(file_path, 'rb') as f:
        for block in iter(lambda: f.read(1 << 20), b''):
            sha.update(block)
    return sha.hexdigest()


def write_array_csv(file_path, array, columns, index_label=None, metadata=None):
    """
    Write a 2-D array as CSV and, optionally, a JSON sidecar with the same stem.

    Parameters
    ----------
    file_path : str or pathlib.Path
        Destination CSV file
    array : np.ndarray
        2-D array of values, one CSV row per array row
    columns : list of str
        Column names
    index_label : str, optional
        If given, the row index is written as a first column with this name
    metadata : dict, optional
        Written to `<stem>.json` next to the CSV

    Returns
    -------
    written : list of pathlib.Path
        The CSV path, followed by the sidecar path if one was written
    """
    file_path = pathlib.Path(file_path)
    data = pd.DataFrame(np.asarray(array), columns=columns)
    data.to_csv(file_path, index=index_label is not None, index_label=index_label,
                float_format=CSV_FLOAT_FORMAT)
    written = [file_path]
    if metadata is not None:
        sidecar = file_path.with_suffix('.json')
        write_json(sidecar, metadata)
        written.append(sidecar)
    return written


def read_array_csv(file_path, columns=None, index_col=None):
    """
    Read a CSV written by `write_array_csv`.

    Returns
    -------
    array : np.ndarray
        float64 values of the selected columns (all columns if None)
    metadata : dict or None
        Contents of the JSON sidecar, if present
    """
    file_path = pathlib.Path(file_path)
    data = pd.read_csv(file_path, index_col=index_col, float_precision='round_trip')
    if columns is not None:
        data = data[columns]
    sidecar = file_path.with_suffix('.json')
    metadata = read_json(sidecar) if sidecar.is_file() else None
    return data.to_numpy(dtype=np.float64), metadata


def write_manifest(directory, manifest):
    """
    Write a run manifest into an artifact directory, recording the digest of every output.

    Parameters
    ----------
    directory : str or pathlib.Path
        Artifact directory
    manifest : dict
        Manifest fields; `outputs` is a list of paths relative to `directory`

    Returns
    -------
    manifest_path : pathlib.Path
    """
    directory = pathlib.Path(directory)
    manifest = dict(manifest)
    manifest['outputs'] = {
        str(name): file_digest(directory / name)
        for name in sorted(manifest.get('outputs', []))
    }
    manifest_path = directory / MANIFEST_NAME
    write_json(manifest_path, manifest)
    return manifest_path


def verify_artifact(file_path):
    """
    Check a file against the manifest of the artifact directory that holds it.

    Parameters
    ----------
    file_path : str or pathlib.Path
        An artifact written by a subcommand

    Returns
    -------
    digest : str
        The verified sha256 of the file

    Raises
    ------
    StaleArtifactError
        If the file is missing, unlisted, or its bytes differ from the recorded digest
    """
    file_path = pathlib.Path(file_path)
    manifest_path = file_path.parent / MANIFEST_NAME
    if not file_path.is_file():
        raise StaleArtifactError(f'artifact {file_path} does not exist')
    if not manifest_path.is_file():
        raise StaleArtifactError(f'no manifest found next to {file_path}')
    outputs = read_json(manifest_path).get('outputs', {})
    expected = outputs.get(file_path.name)
    if expected is None:
        raise StaleArtifactError(f'{file_path.name} is not listed in {manifest_path}')
    actual = file_digest(file_path)
    if actual != expected:
        logger.error(f'digest mismatch for {file_path}: manifest {expected}, file {actual}')
        raise StaleArtifactError(f'{file_path} was modified after {manifest_path} was written')
    return actual


def ensure_dir(directory):
    """Create a directory (and parents) if needed and return it as a Path."""
    directory = pathlib.Path(directory)
    os.makedirs(directory, exist_ok=True)
    return directory


_SCALAR_TYPES = {
    'float': (numbers.Real, 'a number'),
    'int': (numbers.Integral, 'an integer'),
    'str': (str, 'a string'),
    'bool': (bool, 'true or false'),
}


def _check_type(value, annotation, name):
    expected = _SCALAR_TYPES.get(getattr(annotation, '__name__', annotation))
    if expected is None or value is None:
        return
    kind, description = expected
    if not isinstance(value, kind) or (isinstance(value, bool) and kind is not bool):
        raise ConfigError(f'expected {description}, got {value!r}', field=name)


class DictConfig:
    """
    Mixin for dataclass configuration records giving a strict dictionary round trip.

    `from_dict` rejects unknown keys, missing required keys and scalar values of the wrong type
    with a ConfigError naming the key, then lets the dataclass' `__post_init__` validate the
    values. Any TypeError or ValueError the constructor still raises becomes a ConfigError.
    """
    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values, section=None):
        section = section or cls.__name__
        fields = dataclasses.fields(cls)
        required = [
            f.name for f in fields
            if f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING
        ]
        check_keys(values, [f.name for f in fields], required, section=section)
        for f in fields:
            if f.name in values:
                _check_type(values[f.name], f.type, f'{section}.{f.name}')
        try:
            return cls(**values)
        except ConfigError:
            raise
        except (TypeError, ValueError) as ex:
            raise ConfigError(str(ex), field=section) from ex


def write_parameter_blob(file_path, header, state):
    """
    Write a one-line UTF-8 JSON header followed by the tensors of `state` as contiguous
    little-endian float64, in iteration order. The header gains a `parameters` list of
    [name, shape] pairs describing the blob.
    """
    header = dict(header, parameters=[[name, list(tensor.shape)] for name, tensor in state.items()])
    with open(file_path, 'wb') as f:
        f.write(json.dumps(header, sort_keys=True).encode('utf-8'))
        f.write(b'\n')
        for tensor in state.values():
            f.write(as_array(tensor).astype('<f8').tobytes(order='C'))


def read_parameter_blob(file_path):
    """
    Read a file written by `write_parameter_blob`.

    Returns
    -------
    header : dict
    state : dict of str to torch.Tensor
    """
    with open(file_path, 'rb') as f:
        header = json.loads(f.readline().decode('utf-8'))
        values = np.frombuffer(f.read(), dtype='<f8')
    expected = sum(int(np.prod(shape)) for _, shape in header['parameters'])
    if len(values) != expected:
        raise ConfigError(f'{file_path} holds {len(values)} values, its header describes '
                          f'{expected}', field='parameters')
    state = {}
    offset = 0
    for name, shape in header['parameters']:
        size = int(np.prod(shape))
        state[name] = torch.from_numpy(values[offset:offset + size].copy()).reshape(shape)
        offset += size
    return header, state
