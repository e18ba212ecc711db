"""INI document helpers shared by models, configs, signatures and snapshots."""
from typing import Iterable, List, Optional, Tuple
import configparser
from io import StringIO
from pathlib import Path

from .types import DetectorError, UnreadableInput


def new_document() -> configparser.ConfigParser:
    doc = configparser.ConfigParser(interpolation=None, strict=True,
                                    delimiters=('=',), comment_prefixes=('#', ';'))
    doc.optionxform = str  # keep option names case-sensitive
    return doc


def parse_document(text: str, source: str = '<string>',
                   error: type = DetectorError) -> configparser.ConfigParser:
    doc = new_document()
    try:
        doc.read_string(text, source=source)
    except configparser.Error as e:
        raise error(f"Error parsing {source}: {e}")
    return doc


def read_document(path, error: type = DetectorError) -> configparser.ConfigParser:
    try:
        text = Path(path).read_text(encoding='utf-8')
    except OSError as e:
        raise UnreadableInput(f"Could not read {path}: {e}") from e
    return parse_document(text, str(path), error)


def document_to_text(doc: configparser.ConfigParser) -> str:
    out = StringIO()
    doc.write(out)
    return out.getvalue()


def write_document(path, doc: configparser.ConfigParser) -> None:
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        doc.write(f)


def fmt_float(value: float) -> str:
    return repr(float(value))


def fmt_floats(values: Iterable[float]) -> str:
    return ', '.join(repr(float(v)) for v in values)


def parse_floats(text: str, error: type = DetectorError) -> Tuple[float, ...]:
    text = text.strip()
    if not text:
        return ()
    try:
        return tuple(float(part) for part in text.split(','))
    except ValueError as e:
        raise error(f"bad float list {text!r}: {e}")


def get_float(doc: configparser.ConfigParser, section: str, key: str,
              error: type = DetectorError, default: Optional[float] = None) -> float:
    try:
        return doc.getfloat(section, key)
    except (configparser.NoSectionError, configparser.NoOptionError):
        if default is not None:
            return default
        raise error(f"missing [{section}] {key}")
    except ValueError as e:
        raise error(f"bad value for [{section}] {key}: {e}")


def get_int(doc: configparser.ConfigParser, section: str, key: str,
            error: type = DetectorError, default: Optional[int] = None) -> int:
    try:
        return doc.getint(section, key)
    except (configparser.NoSectionError, configparser.NoOptionError):
        if default is not None:
            return default
        raise error(f"missing [{section}] {key}")
    except ValueError as e:
        raise error(f"bad value for [{section}] {key}: {e}")


def sections_with_prefix(doc: configparser.ConfigParser, prefix: str) -> List[str]:
    return [s for s in doc.sections() if s.startswith(prefix)]
