"""Run configuration: INI-style file plus ``section.key=value`` overrides."""

import configparser
import dataclasses
import io

from .attention import AttentionConfig
from .model import ArchSpec
from .trainer import TrainConfig

SECTIONS = {"train": TrainConfig, "arch": ArchSpec, "attention": AttentionConfig}


def _fields(cls):
    return {f.name: f for f in dataclasses.fields(cls) if f.name != "attention"}


def _coerce(cls, key, text):
    f = _fields(cls)[key]
    default = f.default if f.default is not dataclasses.MISSING else None
    kind = f.type if isinstance(f.type, type) else type(default)
    if kind is bool:
        low = text.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: not a boolean: {text!r}")
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    return text.strip()


class RunConfig:
    def __init__(self, values=None):
        self.values = {s: {} for s in SECTIONS}
        for dotted, v in (values or {}).items():
            self.set(dotted, v)

    def set(self, dotted, value):
        if "." not in dotted:
            raise KeyError(f"override {dotted!r} must be section.key")
        section, key = dotted.split(".", 1)
        if section not in SECTIONS:
            raise KeyError(f"unknown config section {section!r}")
        cls = SECTIONS[section]
        if key not in _fields(cls):
            raise KeyError(f"unknown config key {section}.{key}")
        self.values[section][key] = _coerce(cls, key, value) if isinstance(value, str) else value

    @classmethod
    def from_text(cls, text):
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        cp.read_string(text)
        cfg = cls()
        for section in cp.sections():
            for key, v in cp.items(section):
                cfg.set(f"{section}.{key}", v)
        return cfg

    @classmethod
    def from_file(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    def apply(self, overrides):
        for item in overrides or []:
            if "=" not in item:
                raise ValueError(f"override {item!r} must look like section.key=value")
            k, v = item.split("=", 1)
            self.set(k.strip(), v)
        return self

    def build(self):
        """(TrainConfig, ArchSpec) with the attention config nested in the spec."""
        attn = AttentionConfig(**{**{"downscale_rate": 2}, **self.values["attention"]}).validate()
        train = TrainConfig(**self.values["train"]).validate()
        arch = dict(self.values["arch"])
        arch.setdefault("image_size", train.image_size)
        arch.setdefault("local_size", train.hole_h)
        spec = ArchSpec(attention=attn, **arch)
        return train, spec

    def echo(self):
        """Effective configuration (defaults filled in) as INI text."""
        train, spec = self.build()
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        for name, obj in (("train", train), ("arch", spec), ("attention", spec.attention)):
            cp[name] = {k: str(getattr(obj, k)) for k in _fields(type(obj))}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()
