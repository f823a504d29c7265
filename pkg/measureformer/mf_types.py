"""Immutable value types shared by every module."""
from __future__ import annotations
import copyreg
import json
import numpy as np
from numpy.typing import NDArray
from typing import Any, Iterator, Iterable, Mapping
from .util import ConfigError, DimensionError

__all__ = (
    'Immutable',
    'ParamDict',
    'freeze',
    'pickle_register'
)

FloatArray = NDArray[np.float64]

PARAMS_FORMAT = 'measureformer-params'


def freeze(array: Any, dtype: Any = np.float64) -> NDArray[Any]:
    """Return a read-only contiguous copy of `array`."""

    frozen = np.array(array, dtype=dtype, copy=True, order='C')
    frozen.setflags(write=False)
    return frozen


def _hash_key(value: Any) -> Any:
    """Hashable stand-in for a field value."""

    if isinstance(value, np.ndarray):
        return (np.ndarray, value.shape, value.dtype.str, value.tobytes())
    return (type(value), value)


def _same(a: Any, b: Any) -> bool:
    """Field equality that understands arrays."""

    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        return (
            isinstance(a, np.ndarray) and isinstance(b, np.ndarray) and
            a.shape == b.shape and bool(np.array_equal(a, b))
        )
    return bool(a == b)


class Immutable:
    """
    Immutable.

    Arrays handed to the constructor are copied and frozen, so a value object
    can be shared freely between forward passes.
    """

    __slots__: tuple[str, ...] = ('_hash',)

    _hash: int

    def __init__(self, **kwargs: Any) -> None:
        """Initialize."""

        temp = []
        for k, v in kwargs.items():
            if isinstance(v, np.ndarray):
                v = freeze(v, v.dtype)
            temp.append(_hash_key(v))
            super().__setattr__(k, v)
        super().__setattr__('_hash', hash(tuple(temp)))

    @classmethod
    def __base__(cls) -> type[Immutable]:
        """Get base class."""

        return cls

    def _fields(self) -> Iterator[str]:
        """Public slot names."""

        for key in self.__slots__:
            if key != '_hash':
                yield key

    def __eq__(self, other: Any) -> bool:
        """Equal."""

        return (
            isinstance(other, self.__base__()) and
            all(_same(getattr(other, key), getattr(self, key)) for key in self._fields())
        )

    def __ne__(self, other: Any) -> bool:
        """Not equal."""

        return not self.__eq__(other)

    def __hash__(self) -> int:
        """Hash."""

        return self._hash

    def __setattr__(self, name: str, value: Any) -> None:
        """Prevent mutability."""

        raise AttributeError(f"'{self.__class__.__name__}' is immutable")

    def __repr__(self) -> str:  # pragma: no cover
        """Representation."""

        r = ', '.join([f"{k}={getattr(self, k)!r}" for k in self._fields()])
        return f"{self.__class__.__name__}({r})"

    __str__ = __repr__


class ParamDict(Mapping[str, FloatArray]):
    """
    Hashable, immutable mapping of parameter names to float arrays.

    Insertion order is kept and defines the layout used by `flatten`.
    """

    def __init__(self, arg: Mapping[str, Any] | Iterable[tuple[str, Any]] = ()) -> None:
        """Initialize."""

        items = list(arg.items()) if isinstance(arg, Mapping) else list(arg)
        self._d = {}  # type: dict[str, FloatArray]
        for name, value in items:
            self._d[name] = freeze(value)
        self._validate()
        self._hash = hash(tuple((k, v.shape, v.tobytes()) for k, v in self._d.items()))

    def _validate(self) -> None:
        """Validate arguments."""

        for name, value in self._d.items():
            if not isinstance(name, str) or not name:
                raise TypeError(f'{self.__class__.__name__} keys must be non-empty strings')
            if not np.all(np.isfinite(value)):
                raise ValueError(f"Parameter '{name}' holds non-finite values")

    def __iter__(self) -> Iterator[str]:
        """Iterator."""

        return iter(self._d)

    def __len__(self) -> int:
        """Length."""

        return len(self._d)

    def __getitem__(self, key: str) -> FloatArray:
        """Get item: `params['layer0.residual']`."""

        return self._d[key]

    def __hash__(self) -> int:
        """Hash."""

        return self._hash

    def __eq__(self, other: Any) -> bool:
        """Equal when names, order, shapes and values agree bit for bit."""

        if not isinstance(other, ParamDict) or list(self._d) != list(other._d):
            return False
        return all(_same(v, other._d[k]) for k, v in self._d.items())

    def __ne__(self, other: Any) -> bool:
        """Not equal."""

        return not self.__eq__(other)

    def __repr__(self) -> str:  # pragma: no cover
        """Representation."""

        shapes = ', '.join(f'{k}: {v.shape}' for k, v in self._d.items())
        return f'{self.__class__.__name__}({{{shapes}}})'

    __str__ = __repr__

    @property
    def size(self) -> int:
        """Total scalar count."""

        return sum(v.size for v in self._d.values())

    def replace(self, updates: Mapping[str, Any]) -> ParamDict:
        """Copy with some entries replaced; names must already exist."""

        for name in updates:
            if name not in self._d:
                raise KeyError(name)
        return ParamDict((k, updates.get(k, v)) for k, v in self._d.items())

    def map(self, func: Any) -> ParamDict:
        """Apply `func` to every array."""

        return ParamDict((k, func(v)) for k, v in self._d.items())

    def flatten(self) -> FloatArray:
        """Concatenate every parameter into one vector in insertion order."""

        if not self._d:
            return np.zeros(0)
        return np.concatenate([v.ravel() for v in self._d.values()])

    def unflatten(self, vector: FloatArray) -> ParamDict:
        """Inverse of `flatten` for a vector of matching length."""

        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.size,):
            raise DimensionError(f'Expected a flat vector of length {self.size}, got shape {vector.shape}')
        out = []
        offset = 0
        for k, v in self._d.items():
            out.append((k, vector[offset:offset + v.size].reshape(v.shape)))
            offset += v.size
        return ParamDict(out)

    def to_json(self) -> str:
        """Serialize to the flat JSON manifest."""

        return json.dumps(
            {
                'format': PARAMS_FORMAT,
                'params': [
                    {'name': k, 'shape': list(v.shape), 'values': v.ravel().tolist()} for k, v in self._d.items()
                ]
            },
            indent=1
        )

    @classmethod
    def from_json(cls, text: str) -> ParamDict:
        """Load a manifest written by `to_json`."""

        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f'Invalid parameter manifest: {e.msg}', text, e.pos) from e
        if not isinstance(data, dict) or data.get('format') != PARAMS_FORMAT:
            raise ConfigError(f"Parameter manifest must declare format '{PARAMS_FORMAT}'")
        out = []
        for entry in data.get('params', []):
            try:
                shape = tuple(int(s) for s in entry['shape'])
                values = np.asarray(entry['values'], dtype=np.float64).reshape(shape)
                out.append((str(entry['name']), values))
            except (KeyError, TypeError, ValueError) as e:
                raise ConfigError(f'Malformed parameter entry: {entry!r:.80}') from e
        return cls(out)


def _restore(cls: type[Immutable], fields: dict[str, Any]) -> Immutable:
    return cls(**fields)


def _pickle(p: Any) -> Any:
    return _restore, (p.__base__(), {k: getattr(p, k) for k in p._fields()})


def pickle_register(obj: Any) -> None:
    """Allow object to be pickled."""

    copyreg.pickle(obj, _pickle)


def _pickle_params(p: ParamDict) -> Any:
    return ParamDict, (list(p.items()),)


copyreg.pickle(ParamDict, _pickle_params)
