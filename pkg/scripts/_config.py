"""Turn a dataclass of experiment settings into command-line flags."""

import argparse
import dataclasses
import json
from pathlib import Path


def _parse_list(kind):
    return lambda text: [kind(t) for t in text.split(",") if t.strip()]


def parse(cls, description=None, argv=None):
    parser = argparse.ArgumentParser(description=description or cls.__doc__)
    for f in dataclasses.fields(cls):
        default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
        flag = "--" + f.name.replace("_", "-")
        if isinstance(default, bool):
            parser.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction, default=default)
        elif isinstance(default, (list, tuple)):
            kind = type(default[0]) if default else float
            parser.add_argument(flag, dest=f.name, type=_parse_list(kind), default=list(default),
                                help=f"comma-separated (default {','.join(map(str, default))})")
        else:
            parser.add_argument(flag, dest=f.name, type=type(default) if default is not None else str,
                                default=default, help=f"default {default}")
    return cls(**vars(parser.parse_args(argv)))


def save(cfg, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "settings.json").write_text(json.dumps(dataclasses.asdict(cfg), indent=2) + "\n")
    return out
