"""Plain-text file formats shared by the command line tools.

All column indices in files are 1-based; in memory they are 0-based.
"""

from __future__ import annotations

import numpy as np

from .ggl import ColumnMapping, ContactList, PriorMatrix


class FileFormatError(ValueError):
    pass


def _rows(text, what):
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if line and not line.startswith("#"):
            yield lineno, line.split()


def _num(parts, lineno, what, kinds):
    if len(parts) < len(kinds):
        raise FileFormatError(f"{what} line {lineno}: expected {len(kinds)} fields")
    try:
        return [k(p) for k, p in zip(kinds, parts)]
    except ValueError:
        raise FileFormatError(f"{what} line {lineno}: unparsable field") from None


def read_prior(text, L):
    """``i j p`` lines; unlisted pairs get probability 0 (so the floor applies)."""
    P = np.zeros((L, L))
    np.fill_diagonal(P, 1.0)
    for lineno, parts in _rows(text, "prior"):
        i, j, p = _num(parts, lineno, "prior", (int, int, float))
        if not (1 <= i <= L and 1 <= j <= L) or i == j:
            raise FileFormatError(f"prior line {lineno}: pair ({i}, {j}) invalid for L={L}")
        if not 0 <= p <= 1:
            raise FileFormatError(f"prior line {lineno}: probability {p} outside [0, 1]")
        P[i - 1, j - 1] = P[j - 1, i - 1] = p
    return PriorMatrix(P)


def read_mapping(text, n_aux):
    """``k i j p`` lines: auxiliary family ``k`` column ``j`` aligned to target column ``i``."""
    maps = [dict() for _ in range(n_aux)]
    for lineno, parts in _rows(text, "mapping"):
        k, i, j, p = _num(parts, lineno, "mapping", (int, int, int, float))
        if not 1 <= k <= n_aux:
            raise FileFormatError(f"mapping line {lineno}: family {k} outside 1..{n_aux}")
        if i < 1 or j < 1:
            raise FileFormatError(f"mapping line {lineno}: columns are 1-based")
        if i - 1 in maps[k - 1]:
            raise FileFormatError(f"mapping line {lineno}: target column {i} mapped twice")
        maps[k - 1][i - 1] = (j - 1, p)
    try:
        return ColumnMapping(maps)
    except ValueError as exc:
        raise FileFormatError(f"mapping: {exc}") from None


def format_mapping(mapping):
    lines = []
    for k, mp in enumerate(mapping.maps, 1):
        for i in sorted(mp):
            j, p = mp[i]
            lines.append(f"{k} {i + 1} {j + 1} {p:.6f}")
    return "\n".join(lines) + ("\n" if lines else "")


def check_mapping(mapping, target_L, aux_Ls):
    for k, (mp, La) in enumerate(zip(mapping.maps, aux_Ls), 1):
        for i, (j, _) in mp.items():
            if i >= target_L or j >= La:
                raise FileFormatError(f"mapping for family {k}: column pair ({i + 1}, {j + 1}) out of range")


def format_contacts(contacts, header=()):
    lines = [f"# {h}" for h in header]
    lines.append(f"# L={contacts.L}")
    lines += [f"{i + 1} {j + 1} {s:.6e}" for i, j, s in contacts.entries]
    return "\n".join(lines) + "\n"


def read_contacts(text):
    L = None
    entries = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if line.startswith("# L="):
            L = int(line[4:])
            continue
        if not line or line.startswith("#"):
            continue
        i, j, s = _num(line.split(), lineno, "contact file", (int, int, float))
        entries.append((min(i, j) - 1, max(i, j) - 1, s))
    if L is None:
        raise FileFormatError("contact file lacks a '# L=' line")
    return ContactList(tuple(entries), L)


def read_native(text):
    pairs = set()
    for lineno, parts in _rows(text, "native contacts"):
        i, j = _num(parts, lineno, "native contacts", (int, int))
        if i == j:
            raise FileFormatError(f"native contacts line {lineno}: i == j")
        pairs.add((min(i, j) - 1, max(i, j) - 1))
    return pairs


def read_config(text):
    """``key = value`` lines; keys use dashes or underscores."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FileFormatError(f"config line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = val
    return out
