from functools import lru_cache
from typing import Any, Union, get_args, get_origin

import json
import math
import os
import re

from congestexp.errors import SchemaError


class BaseDataMeta(type):
    # Annotated names become class-level key constants: GameSpec.n == "n"
    def __new__(mcs, name, bases, namespace):
        for field in namespace.get("__annotations__", {}):
            namespace.setdefault(field, field)
        return super().__new__(mcs, name, bases, namespace)


_ENV_PATTERN = re.compile(r"<<([A-Z_][A-Z0-9_]*)>>")
_MISSING = object()


class BaseData(dict, metaclass=BaseDataMeta):
    """
    Schema-validated dict. Annotations declare keys:

        class Point(BaseData):
            x: float               # required
            label: (str, "origin")  # optional, with default

    Unknown keys are kept unless ``trim=True``. All failing keys are
    reported together in a single SchemaError.

    Non-finite floats serialize as null; keys listed in ``NULL_IS_INF`` read
    null back as +inf.
    """

    NULL_IS_INF = ()

    @classmethod
    @lru_cache(maxsize=None)
    def get_annotations(cls):
        anns = {}
        for base in reversed(cls.__mro__):
            anns.update(getattr(base, "__annotations__", {}) or {})
        return anns

    def get_defaults(self):
        return {}

    def do_pre_process(self, in_dict):
        return in_dict

    def do_validation(self, key, value):
        return value, ""

    def get_all_keys(self):
        required, optional, defaults = {}, {}, {}
        for key, ann in type(self).get_annotations().items():
            if type(ann) is tuple:
                assert len(ann) == 2, f"{type(self).__name__}.{key}: optional keys are (type, default)"
                optional[key] = ann[0]
                defaults[key] = ann[1]
            else:
                required[key] = ann
        defaults.update(self.get_defaults())
        return required, optional, defaults

    @classmethod
    def valid_type(cls, value: Any, annotation) -> bool:
        origin = get_origin(annotation)
        args = get_args(annotation)
        if annotation is Any:
            return True
        if origin is Union:
            return any(cls.valid_type(value, arg) for arg in args)
        if origin is list or annotation is list:
            if not isinstance(value, list):
                return False
            (elem,) = args or (Any,)
            return all(cls.valid_type(item, elem) for item in value)
        if origin is dict or annotation is dict:
            if not isinstance(value, dict):
                return False
            kt, vt = args if len(args) == 2 else (Any, Any)
            return all(cls.valid_type(k, kt) and cls.valid_type(v, vt) for k, v in value.items())
        if annotation is float:
            return isinstance(value, float)
        if annotation is int:
            return isinstance(value, int) and not isinstance(value, bool)
        if isinstance(annotation, type):
            return isinstance(value, annotation)
        return False

    @classmethod
    def coerce(cls, value: Any, annotation):
        """Widen ints to floats where the annotation asks for float, recursively."""
        origin = get_origin(annotation)
        args = get_args(annotation)
        if annotation is float and isinstance(value, int) and not isinstance(value, bool):
            return float(value)
        if (origin is list) and isinstance(value, list) and args:
            out = []
            for i, v in enumerate(value):
                try:
                    out.append(cls.coerce(v, args[0]))
                except SchemaError as e:
                    raise e.prefixed(f"[{i}]")
            return out
        if origin is Union:
            for arg in args:
                if arg is float and isinstance(value, int) and not isinstance(value, bool):
                    if not any(a is int for a in args):
                        return float(value)
            return value
        if isinstance(annotation, type) and issubclass(annotation, BaseData) and isinstance(value, dict):
            return value if isinstance(value, annotation) else annotation(value)
        return value

    def do_env_mapping(self, value):
        if isinstance(value, BaseData):
            return value
        if isinstance(value, dict):
            return {k: self.do_env_mapping(v) for k, v in value.items()}
        if isinstance(value, list):
            return [self.do_env_mapping(v) for v in value]
        if isinstance(value, str):
            def sub(match):
                env_var = match.group(1)
                found = os.getenv(env_var)
                if found is None:
                    raise ValueError(
                        f"Missing required environment variable '{env_var}' for '{type(self).__name__}'"
                    )
                return found
            return _ENV_PATTERN.sub(sub, value)
        return value

    def _check(self, key, expected_type, value, errors):
        label = str(key)
        if value is None and key in self.NULL_IS_INF:
            value = math.inf
        try:
            value = self.coerce(value, expected_type)
        except SchemaError as e:
            errors.extend(e.prefixed(label).errors)
            return _MISSING
        value, message = self.do_validation(key, value)
        if message:
            errors.append((label, message))
            return _MISSING
        if value is None:
            errors.append((label, f"required value missing (expected {getattr(expected_type, '__name__', expected_type)})"))
            return _MISSING
        if expected_type is not Any and not self.valid_type(value, expected_type):
            errors.append((label, f"expected {getattr(expected_type, '__name__', expected_type)}, got {type(value).__name__}"))
            return _MISSING
        return value

    def __init__(self, in_dict=None, trim=False, **kwargs):
        if in_dict is None:
            in_dict = {}
        assert isinstance(in_dict, dict), f"{type(self).__name__} wraps a dict, got {type(in_dict).__name__}"
        if isinstance(in_dict, type(self)) and not kwargs:
            super().__init__(in_dict)
            return
        in_dict = dict(in_dict)
        in_dict.update(kwargs)
        errors = []
        try:
            in_dict = self.do_env_mapping(in_dict)
            in_dict = self.do_pre_process(in_dict)
        except (TypeError, ValueError, AssertionError) as e:
            raise SchemaError([("", str(e))], type(self).__name__)
        if in_dict is None:
            raise Exception("Pre process must return a processed dict")
        required, optional, defaults = self.get_all_keys()
        if trim:
            allowed = set(required) | set(optional)
            in_dict = {k: v for k, v in in_dict.items() if k in allowed}

        out = dict(in_dict)
        for key, expected_type in list(required.items()) + list(optional.items()):
            if key not in in_dict or (in_dict[key] is None and key in optional):
                if key in required:
                    errors.append((key, "missing required key"))
                elif key in defaults and defaults[key] is not None:
                    out[key] = defaults[key]
                else:
                    out.pop(key, None)
                continue
            try:
                value = self._check(key, expected_type, in_dict[key], errors)
            except SchemaError as e:
                errors.extend(e.prefixed(key).errors)
                continue
            except (TypeError, ValueError, AssertionError) as e:
                errors.append((key, str(e)))
                continue
            if value is not _MISSING:
                out[key] = value

        if errors:
            raise SchemaError(errors, type(self).__name__)
        super().__init__(out)

    def __getattribute__(self, name):
        if name in type(self).get_annotations():
            return self.get(name)
        return super().__getattribute__(name)

    def __setattr__(self, name, value):
        if name in type(self).get_annotations():
            self.__setitem__(name, value)
            return
        super().__setattr__(name, value)

    def __setitem__(self, key, value):
        required, optional, _ = self.get_all_keys()
        expected = {**required, **optional}.get(key)
        if expected is not None:
            errors = []
            value = self._check(key, expected, value, errors)
            if errors:
                raise SchemaError(errors, type(self).__name__)
        super().__setitem__(key, value)

    @classmethod
    def to_safe_value(cls, val):
        if isinstance(val, BaseData):
            return val.to_safe_dict()
        if isinstance(val, dict):
            return {k: cls.to_safe_value(v) for k, v in val.items()}
        if isinstance(val, (list, tuple)):
            return [cls.to_safe_value(v) for v in val]
        if isinstance(val, float) and not math.isfinite(val):
            return None
        if hasattr(val, "tolist"):
            return cls.to_safe_value(val.tolist())
        return val

    def to_safe_dict(self):
        """Recursively convert to JSON-ready built-ins; inf and nan become None."""
        return {k: self.to_safe_value(v) for k, v in self.items()}

    def to_json(self, indent=1) -> str:
        return json.dumps(self.to_safe_dict(), indent=indent, sort_keys=True, allow_nan=False)
