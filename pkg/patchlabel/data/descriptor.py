"""
CSV format descriptor
---------------------

A descriptor tells `load_csv` how to read a sensor file. It is a small
``key=value`` text file, one key per line, ``#`` starting a comment.

 =================  ===========================================================
 key                value
 =================  ===========================================================
 timestamp_col      column holding timestamps (optional)
 label_col          column holding activity labels
 channel_cols       comma list of sensor columns, in channel order
 delimiter          field separator; ``tab``/``space`` or ``\\t`` accepted
 has_header         ``true``/``false``; without header, columns are indices
 label_vocab        comma list of label strings; order fixes class ids
 sample_rate_hz     sampling rate (optional if timestamps are given)
 timestamp_unit     ``s``, ``ms``, ``us`` or ``ns`` (default ``s``)
 strip_chars        characters stripped from both ends of every cell
 =================  ===========================================================
"""
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Union

from patchlabel.errors import DataError

BUNDLED_DIR = Path(__file__).parent / 'descriptors'

TIMESTAMP_UNITS: Dict[str, float] = {'s': 1.0, 'ms': 1e-3, 'us': 1e-6, 'ns': 1e-9}

_DELIMITER_ALIASES = {'tab': '\t', '\\t': '\t', 'space': ' ', 'comma': ',', 'semicolon': ';'}
_TRUE = {'true', 'yes', '1', 'on'}
_FALSE = {'false', 'no', '0', 'off'}


def _split_list(value: str) -> List[str]:
    return [item.strip() for item in value.split(',') if item.strip()]


@dataclass
class FormatDescriptor:
    """
    Column mapping and grammar of a sensor CSV file.
    """
    label_col: str
    channel_cols: List[str]
    label_vocab: List[str]
    timestamp_col: Optional[str] = None
    delimiter: str = ','
    has_header: bool = True
    sample_rate_hz: Optional[float] = None
    timestamp_unit: str = 's'
    strip_chars: str = ''

    REQUIRED = ('label_col', 'channel_cols', 'label_vocab')

    @classmethod
    def from_text(cls, text: str, path=None) -> 'FormatDescriptor':
        """
        Parse descriptor text, one parser per key.
        """
        values: dict = {}
        parsers = {
            'timestamp_col': cls._parse_column,
            'label_col': cls._parse_column,
            'channel_cols': cls._parse_list,
            'label_vocab': cls._parse_list,
            'delimiter': cls._parse_delimiter,
            'has_header': cls._parse_bool,
            'sample_rate_hz': cls._parse_rate,
            'timestamp_unit': cls._parse_unit,
            'strip_chars': cls._parse_raw,
        }

        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip() or line.lstrip().startswith('#'):
                continue

            match = re.match(r'^\s*([A-Za-z_][A-Za-z0-9_]*)\s*=(.*)$', line)
            if not match:
                raise DataError(f'expected `key=value`, got {line!r}', path=path, line=lineno)

            key, value = match.group(1), match.group(2)
            parser = parsers.get(key)
            if parser is None:
                raise DataError(f'unknown descriptor key `{key}` (known: {", ".join(sorted(parsers))})', path=path, line=lineno)
            try:
                values[key] = parser(value)
            except ValueError as ex:
                raise DataError(f'invalid value for `{key}`: {ex}', path=path, line=lineno) from ex

        missing = [k for k in cls.REQUIRED if k not in values]
        if missing:
            raise DataError(f'missing descriptor keys: {", ".join(missing)}', path=path)
        if not values['channel_cols']:
            raise DataError('`channel_cols` is empty', path=path)
        if len(set(values['label_vocab'])) != len(values['label_vocab']):
            raise DataError('`label_vocab` has duplicates', path=path)

        return cls(**values)

    @classmethod
    def bundled(cls, name: str) -> 'FormatDescriptor':
        """Descriptor shipped with the package (`wisdm`, `pamap2`)"""
        path = BUNDLED_DIR / f'{name}.desc'
        if not path.is_file():
            known = ', '.join(sorted(p.stem for p in BUNDLED_DIR.glob('*.desc')))
            raise DataError(f'no bundled descriptor `{name}` (bundled: {known})')
        return cls.from_file(path)

    @classmethod
    def resolve(cls, source: Union[str, Path]) -> 'FormatDescriptor':
        """A descriptor file path, or the name of a bundled descriptor"""
        path = Path(source)
        if path.is_file() or path.suffix or len(path.parts) > 1:
            return cls.from_file(path)
        return cls.bundled(str(source))

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> 'FormatDescriptor':
        """Read and parse a descriptor file"""
        path = Path(path)
        try:
            text = path.read_text(encoding='utf-8')
        except OSError as ex:
            raise DataError(f'cannot read descriptor: {ex}', path=path) from ex
        return cls.from_text(text, path=path)

    def to_text(self) -> str:
        """Serialize back to descriptor grammar"""
        delimiter = {v: k for k, v in _DELIMITER_ALIASES.items() if k in ('tab', 'space')}.get(self.delimiter, self.delimiter)
        lines = []
        if self.timestamp_col is not None:
            lines.append(f'timestamp_col={self.timestamp_col}')
        lines.append(f'label_col={self.label_col}')
        lines.append(f'channel_cols={",".join(self.channel_cols)}')
        lines.append(f'delimiter={delimiter}')
        lines.append(f'has_header={"true" if self.has_header else "false"}')
        lines.append(f'label_vocab={",".join(self.label_vocab)}')
        if self.sample_rate_hz is not None:
            lines.append(f'sample_rate_hz={self.sample_rate_hz!r}')
        if self.timestamp_col is not None:
            lines.append(f'timestamp_unit={self.timestamp_unit}')
        if self.strip_chars:
            lines.append(f'strip_chars={self.strip_chars}')
        return '\n'.join(lines) + '\n'

    def write(self, path: Union[str, Path]):
        """Write descriptor next to a data file"""
        Path(path).write_text(self.to_text(), encoding='utf-8')

    @staticmethod
    def _parse_column(value: str) -> str:
        value = value.strip()
        if not value:
            raise ValueError('empty column name')
        return value

    @staticmethod
    def _parse_list(value: str) -> List[str]:
        return _split_list(value)

    @staticmethod
    def _parse_delimiter(value: str) -> str:
        raw = value.strip()
        if raw in _DELIMITER_ALIASES:
            return _DELIMITER_ALIASES[raw]
        if len(raw) != 1:
            raise ValueError(f'delimiter must be a single character, got {value!r}')
        return raw

    @staticmethod
    def _parse_bool(value: str) -> bool:
        raw = value.strip().lower()
        if raw in _TRUE:
            return True
        if raw in _FALSE:
            return False
        raise ValueError(f'not a boolean: {value!r}')

    @staticmethod
    def _parse_rate(value: str) -> float:
        rate = float(value)
        if rate <= 0:
            raise ValueError('sample rate must be positive')
        return rate

    @staticmethod
    def _parse_unit(value: str) -> str:
        unit = value.strip()
        if unit not in TIMESTAMP_UNITS:
            raise ValueError(f'unit must be one of {", ".join(TIMESTAMP_UNITS)}')
        return unit

    @staticmethod
    def _parse_raw(value: str) -> str:
        return value.strip()
