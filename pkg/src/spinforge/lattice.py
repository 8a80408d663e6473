"""Crystal geometry, neighbor shells and dipolar coupling histograms.

Structures are loaded from a JSON document carrying the unit-cell vectors
(Angstrom), the external-field direction, and fractional atomic positions
grouped into molecules.  With ``"symmetry": "P-1"`` the file lists one
molecule and the second is generated by inversion through the cell origin.

Couplings use the point-dipole secular form with SI constants,

    d(r, theta) = (mu0/4pi) gamma_C^2 hbar (1 - 3 cos^2 theta) / (2 r^3),

converted from angular to cyclic frequency (Hz).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .dephasing import fit_lorentzian

GAMMA_13C = 6.728284e7         # rad / (s T)
HBAR = 1.054571817e-34         # J s
MU0_OVER_4PI = 1.0e-7          # T^2 m^3 / J

# Reference simulated concentration: one labelled molecule on 53 sites,
# quoted as 1.9% (the rounded value enters the correction formula).
SIM_CONCENTRATION = 0.019
NATURAL_ABUNDANCE = 0.011

FIG7_LITERAL = "fig7_literal"
BOTH_FAMILIES = "both_families"


class StructureFormatError(ValueError):
    """Raised for malformed or inconsistent structure documents."""


@dataclass(frozen=True)
class AtomSite:
    label: str
    species: str
    frac: tuple[float, float, float]


@dataclass(frozen=True)
class Molecule:
    mol_id: str
    atoms: tuple[AtomSite, ...]


@dataclass(frozen=True)
class CrystalStructure:
    cell: np.ndarray                 # rows are the cell vectors, Angstrom
    field_direction: np.ndarray      # unit vector, crystal Cartesian frame
    molecules: tuple[Molecule, ...]
    symmetry: str

    def cartesian(self, frac, cell_offset=(0, 0, 0)) -> np.ndarray:
        u = np.asarray(frac, dtype=float) + np.asarray(cell_offset, dtype=float)
        return u @ self.cell


@dataclass(frozen=True)
class LatticeSite:
    position: np.ndarray
    label: str
    species: str
    molecule_id: str
    cell_offset: tuple[int, int, int]
    molecule_key: tuple
    r: float
    theta: float
    coupling_hz: float


def dipolar_coupling(r_angstrom: float, theta: float) -> float:
    """Secular dipolar coupling in Hz for a distance (Angstrom) and angle."""
    if r_angstrom <= 0:
        raise ValueError("distance must be > 0")
    r_m = r_angstrom * 1e-10
    ang = MU0_OVER_4PI * GAMMA_13C**2 * HBAR * (1.0 - 3.0 * math.cos(theta) ** 2) / (2.0 * r_m**3)
    return ang / (2.0 * math.pi)


def _require(cond: bool, message: str):
    if not cond:
        raise StructureFormatError(message)


def parse_structure(doc: dict) -> CrystalStructure:
    """Validate and build a structure from a parsed JSON document."""
    _require(isinstance(doc, dict), "structure document must be a JSON object")
    known = {"cell_angstrom", "field_direction", "molecules", "symmetry"}
    unknown = set(doc) - known
    _require(not unknown, f"unknown structure keys: {sorted(unknown)}")
    for key in known:
        _require(key in doc, f"missing structure key {key!r}")

    cell = np.asarray(doc["cell_angstrom"], dtype=float)
    _require(cell.shape == (3, 3), "cell_angstrom must be three 3-vectors")
    _require(abs(np.linalg.det(cell)) > 1e-9, "cell vectors must be linearly independent")

    field = np.asarray(doc["field_direction"], dtype=float)
    _require(field.shape == (3,), "field_direction must be a 3-vector")
    norm = np.linalg.norm(field)
    _require(norm > 0, "field_direction must be nonzero")
    field = field / norm

    symmetry = doc["symmetry"]
    _require(symmetry in ("P-1", "explicit"), f"symmetry must be 'P-1' or 'explicit', got {symmetry!r}")

    mols = []
    _require(isinstance(doc["molecules"], list) and doc["molecules"], "molecules must be a nonempty list")
    for i, m in enumerate(doc["molecules"]):
        _require(isinstance(m, dict) and {"id", "atoms"} <= set(m), f"molecule {i}: needs 'id' and 'atoms'")
        atoms = []
        for j, a in enumerate(m["atoms"]):
            _require({"label", "species", "frac"} <= set(a), f"molecule {i} atom {j}: needs label/species/frac")
            frac = tuple(float(x) for x in a["frac"])
            _require(len(frac) == 3, f"molecule {i} atom {j}: frac must have 3 entries")
            for x in frac:
                _require(0.0 <= x < 1.0, f"molecule {i} atom {j}: fractional coordinate {x} outside [0, 1)")
            atoms.append(AtomSite(label=str(a["label"]), species=str(a["species"]), frac=frac))
        mols.append(Molecule(mol_id=str(m["id"]), atoms=tuple(atoms)))

    if symmetry == "P-1":
        _require(len(mols) == 1, "P-1 symmetry expects a single listed molecule")
        base = mols[0]
        inverted = tuple(
            AtomSite(label=a.label, species=a.species,
                     frac=tuple((-x) % 1.0 for x in a.frac))
            for a in base.atoms
        )
        mols.append(Molecule(mol_id=base.mol_id + "_inv", atoms=inverted))

    ids = [m.mol_id for m in mols]
    _require(len(set(ids)) == len(ids), "molecule ids must be unique")
    cell.setflags(write=False)
    field.setflags(write=False)
    return CrystalStructure(cell=cell, field_direction=field, molecules=tuple(mols),
                            symmetry=symmetry)


def load_structure(path) -> CrystalStructure:
    """Load and validate a structure JSON file."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise StructureFormatError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    try:
        return parse_structure(doc)
    except StructureFormatError as exc:
        raise StructureFormatError(f"{path}: {exc}") from exc


def enumerate_sites(structure: CrystalStructure, ref_molecule: str, ref_spin_label: str,
                    shells: int = 1, species: str | None = None) -> list[LatticeSite]:
    """All same-species sites of neighbor molecules around a reference spin.

    Covers the (2*shells+1)^3 block of cells centered on the home cell,
    every molecule except the reference molecule itself.  Each site carries
    its distance, angle to the field direction, and dipolar coupling.
    """
    if shells < 1:
        raise ValueError("shells must be >= 1")
    mol_by_id = {m.mol_id: m for m in structure.molecules}
    if ref_molecule not in mol_by_id:
        raise ValueError(f"unknown reference molecule {ref_molecule!r}")
    ref_mol = mol_by_id[ref_molecule]
    ref_atoms = [a for a in ref_mol.atoms if a.label == ref_spin_label]
    if not ref_atoms:
        raise ValueError(f"reference molecule has no atom labelled {ref_spin_label!r}")
    ref_atom = ref_atoms[0]
    if species is None:
        species = ref_atom.species
    ref_pos = structure.cartesian(ref_atom.frac)

    field = structure.field_direction
    sites: list[LatticeSite] = []
    rng = range(-shells, shells + 1)
    for i in rng:
        for j in rng:
            for k in rng:
                offset = (i, j, k)
                for mol in structure.molecules:
                    if offset == (0, 0, 0) and mol.mol_id == ref_molecule:
                        continue
                    for atom in mol.atoms:
                        if atom.species != species:
                            continue
                        pos = structure.cartesian(atom.frac, offset)
                        vec = pos - ref_pos
                        r = float(np.linalg.norm(vec))
                        if r <= 0:
                            raise ValueError(
                                f"site {mol.mol_id}/{atom.label} at cell {offset} coincides with the reference")
                        cos_t = float(np.clip(np.dot(vec, field) / r, -1.0, 1.0))
                        theta = math.acos(cos_t)
                        sites.append(LatticeSite(
                            position=pos, label=atom.label, species=atom.species,
                            molecule_id=mol.mol_id, cell_offset=offset,
                            molecule_key=(offset, mol.mol_id),
                            r=r, theta=theta,
                            coupling_hz=dipolar_coupling(r, theta),
                        ))
    return sites


def molecule_count(sites: Sequence[LatticeSite]) -> int:
    return len({s.molecule_key for s in sites})


def molecule_triples(sites: Sequence[LatticeSite],
                     assignment: Mapping[str, str]) -> list[tuple[float, float, float]]:
    """Per-molecule (d_alpha, d_beta, d_gamma) triples in Hz.

    ``assignment`` maps each site label to one of 'alpha', 'beta', 'gamma'.
    Every enumerated site must be assigned, and each molecule must provide
    each role exactly once.
    """
    roles = {"alpha": 0, "beta": 1, "gamma": 2}
    for label, role in assignment.items():
        if role not in roles:
            raise ValueError(f"assignment for {label!r} must be alpha/beta/gamma, got {role!r}")
    per_mol: dict[tuple, dict[int, float]] = {}
    for s in sites:
        if s.label not in assignment:
            raise ValueError(f"site label {s.label!r} has no alpha/beta/gamma assignment")
        slot = roles[assignment[s.label]]
        entry = per_mol.setdefault(s.molecule_key, {})
        if slot in entry:
            raise ValueError(f"molecule {s.molecule_key} has duplicate {assignment[s.label]!r} sites")
        entry[slot] = s.coupling_hz
    triples = []
    for key, entry in sorted(per_mol.items()):
        if set(entry) != {0, 1, 2}:
            raise ValueError(f"molecule {key} is missing one of the alpha/beta/gamma couplings")
        triples.append((entry[0], entry[1], entry[2]))
    return triples


@dataclass(frozen=True)
class CouplingHistogram:
    bin_edges: np.ndarray   # Hz
    weights: np.ndarray
    mode: str

    def __post_init__(self):
        edges = np.asarray(self.bin_edges, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if edges.ndim != 1 or weights.shape != (edges.size - 1,):
            raise ValueError("need n+1 bin edges for n weights")
        d = np.diff(edges)
        if np.abs(d - d[0]).max() > 1e-9 * abs(d[0]):
            raise ValueError("bins must be uniform")
        if (weights < 0).any():
            raise ValueError("weights must be >= 0")
        edges.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "weights", weights)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())


def _combo_frequencies(triples, mode: str, zero_gamma: bool = False) -> np.ndarray:
    fams = (1.5,) if mode == FIG7_LITERAL else (0.5, 1.5)
    freqs = []
    for da, db, dg in triples:
        if zero_gamma:
            dg = 0.0
        for sa in (1.0, -1.0):
            for sb in (1.0, -1.0):
                for sg in (1.0, -1.0):
                    for fam in fams:
                        freqs.append(sa * da + sb * db + sg * fam * dg)
    return np.array(freqs)


def frequency_histogram(sites: Sequence[LatticeSite], assignment: Mapping[str, str],
                        mode: str = FIG7_LITERAL, bins: int = 256,
                        zero_gamma: bool = False) -> CouplingHistogram:
    """Histogram of sign-combination frequencies over the molecule ensemble.

    ``fig7_literal`` uses the +/-3 d_gamma/2 family only (8 combinations
    per molecule); ``both_families`` adds +/- d_gamma/2 (16 combinations).
    Bins span at least +/-5 RMS and always cover every frequency.
    """
    if mode not in (FIG7_LITERAL, BOTH_FAMILIES):
        raise ValueError(f"unknown histogram mode {mode!r}")
    triples = molecule_triples(sites, assignment)
    freqs = _combo_frequencies(triples, mode, zero_gamma=zero_gamma)
    rms = float(np.sqrt(np.mean(freqs**2))) if freqs.size else 1.0
    span = max(5.0 * rms, float(np.abs(freqs).max()) * 1.000001, 1e-12)
    edges = np.linspace(-span, span, bins + 1)
    weights, _ = np.histogram(freqs, bins=edges)
    return CouplingHistogram(bin_edges=edges, weights=weights.astype(float), mode=mode)


def simulation_one_mode(sites: Sequence[LatticeSite], assignment: Mapping[str, str],
                        bins: int = 256, mode: str = FIG7_LITERAL) -> CouplingHistogram:
    """Like-spin couplings excluded (d_gamma forced to zero)."""
    return frequency_histogram(sites, assignment, mode=mode, bins=bins, zero_gamma=True)


def histogram_fwhm(hist: CouplingHistogram) -> tuple[float, float]:
    """Lorentzian FWHM (Hz) and fit residual of a binned density."""
    if hist.total_weight <= 0:
        raise ValueError("histogram is empty")
    fit = fit_lorentzian(hist.centers, hist.weights)
    return fit.fwhm, fit.residual


def concentration_factor(eta: float, sim_concentration: float = SIM_CONCENTRATION) -> float:
    """Linewidth correction (eta + natural abundance) / simulated concentration.

    Valid only in the dilute regime eta < 10%, where the linewidth is
    approximately linear in spin concentration.
    """
    if not 0.0 < eta < 0.10:
        raise ValueError(
            f"eta = {eta} outside the dilute regime (0, 0.10) where the "
            "linear-in-concentration linewidth approximation holds")
    return (eta + NATURAL_ABUNDANCE) / sim_concentration


def shell_factor() -> float:
    """Correction for shells beyond the first: sum_k k^-2 = pi^2/6."""
    return math.pi**2 / 6.0
