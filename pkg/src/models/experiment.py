"""
Experiment configuration, method grids and result tables
"""
import itertools
import json
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd

from models.toy_spec import PERTURB_TARGETS, PopulationSpec, ToySpec
from utils.config import ConfigError, load_config_file, load_method_grids, load_toy_defaults, reject_unknown

logger = logging.getLogger(__name__)

METHOD_NAMES = ("csp", "covcsp", "mtcsp", "sscsp", "ss+mtcsp", "sscsp-noise-only")
TRANSFER_METHODS = frozenset(METHOD_NAMES) - {"csp"}
DEFAULT_METHODS = ("csp", "covcsp", "mtcsp", "sscsp", "ss+mtcsp")

GRID_KEYS = {
    "csp": set(),
    "covcsp": {"lam"},
    "mtcsp": {"lambda1", "lambda2"},
    "sscsp": {"l", "nu"},
    "sscsp-noise-only": {"l", "nu"},
    "ss+mtcsp": set(),
}
OPTION_KEYS = {
    "csp": set(),
    "covcsp": set(),
    "mtcsp": {"max_iterations", "objective_tolerance", "solver", "include_target"},
    "sscsp": {"penalty", "adaptive_l_threshold", "session_scope"},
    "sscsp-noise-only": {"penalty", "adaptive_l_threshold", "session_scope"},
    "ss+mtcsp": set(),
}

RESULT_COLUMNS = ["subject", "method", "params", "train_acc", "test_acc", "repetition"]
TOY_COLUMNS = ["perturb", "eta"]


def _expand(axes: Dict[str, Sequence]) -> List[Dict]:
    if not axes:
        return [{}]
    names = list(axes)
    return [dict(zip(names, values)) for values in itertools.product(*(axes[n] for n in names))]


@dataclass(frozen=True, eq=False)
class MethodSpec:
    """A method name with its parameter grid and fixed options"""
    name: str
    grid: Tuple[Dict, ...] = ({},)
    options: Dict = field(default_factory=dict)
    components: Tuple['MethodSpec', ...] = ()

    def __post_init__(self):
        if self.name not in METHOD_NAMES:
            raise ConfigError(f"unknown method '{self.name}'; choose from {METHOD_NAMES}")
        if self.name == "ss+mtcsp":
            if sorted(c.name for c in self.components) != ["mtcsp", "sscsp"]:
                raise ConfigError("ss+mtcsp needs exactly an sscsp and an mtcsp component")
            object.__setattr__(self, "grid", tuple(
                {**a, **b} for a in self.components[0].points() for b in self.components[1].points()
            ))
        if not self.grid:
            raise ConfigError(f"method '{self.name}' has an empty parameter grid")
        if not self.components:
            for point in self.grid:
                reject_unknown(point, GRID_KEYS[self.name] | OPTION_KEYS[self.name], f"{self.name} grid")
        reject_unknown(self.options, OPTION_KEYS[self.name], f"{self.name} options")

    def points(self) -> List[Dict]:
        """Grid points with the fixed options merged in, in canonical order"""
        return [{**self.options, **p} for p in self.grid]

    def component(self, name: str) -> 'MethodSpec':
        return next(c for c in self.components if c.name == name)

    @classmethod
    def from_definition(cls, name: str, definition=None, defaults: Optional[Dict] = None) -> 'MethodSpec':
        """
        Build from a grid definition: a list of parameter dicts, or an object
        of value lists (cartesian product) with optional "options" and, for
        ss+mtcsp, "components".
        """
        defaults = defaults if defaults is not None else load_method_grids()
        if definition is None:
            if name not in defaults:
                raise ConfigError(f"no default grid for method '{name}'")
            definition = defaults[name]
        if isinstance(definition, list):
            return cls(name, tuple(dict(p) for p in definition))
        if not isinstance(definition, dict):
            raise ConfigError(f"grid of '{name}' must be a list or an object, got {type(definition).__name__}")

        definition = dict(definition)
        options = dict(definition.pop("options", {}))
        components = definition.pop("components", None)
        if name == "ss+mtcsp":
            components = components or ["sscsp", "mtcsp"]
            if isinstance(components, dict):
                parts = tuple(cls.from_definition(n, d, defaults) for n, d in components.items())
            else:
                parts = tuple(cls.from_definition(n, None, defaults) for n in components)
            return cls(name, ({},), options, parts)
        if components is not None:
            raise ConfigError(f"method '{name}' does not take components")
        for key, values in definition.items():
            if not isinstance(values, list) or not values:
                raise ConfigError(f"grid axis '{key}' of '{name}' must be a nonempty list")
        return cls(name, tuple(_expand(definition)), options)

    def to_dict(self) -> Dict:
        data = {'name': self.name, 'grid_size': len(self.grid), 'options': dict(self.options)}
        if self.components:
            data['components'] = [c.to_dict() for c in self.components]
        return data


def default_methods(names: Sequence[str] = DEFAULT_METHODS) -> List[MethodSpec]:
    grids = load_method_grids()
    return [MethodSpec.from_definition(n, None, grids) for n in names]


CONFIG_KEYS = ("dataset", "toy_spec", "population", "scenarios", "eta_grid", "methods", "m",
               "repetitions", "seed", "output", "n_permutations")


@dataclass
class ExperimentConfig:
    """Everything one experiment run needs: data source, methods and output location"""
    dataset: Optional[str] = None
    toy_spec: ToySpec = field(default_factory=ToySpec)
    population: Optional[PopulationSpec] = None
    scenarios: List[str] = field(default_factory=list)
    eta_grid: List[float] = field(default_factory=list)
    methods: List[MethodSpec] = field(default_factory=default_methods)
    m: int = 3
    repetitions: int = 1
    seed: int = 0
    output: str = "results"
    n_permutations: int = 1024

    def __post_init__(self):
        if self.repetitions < 1:
            raise ConfigError(f"repetitions must be at least 1, got {self.repetitions}")
        if self.m < 1:
            raise ConfigError(f"m must be positive, got {self.m}")
        if not self.methods:
            raise ConfigError("an experiment needs at least one method")
        bad = [s for s in self.scenarios if s not in PERTURB_TARGETS]
        if bad:
            raise ConfigError(f"unknown scenarios {bad}; choose from {PERTURB_TARGETS}")
        if self.population is not None:
            if not self.scenarios:
                self.scenarios = [self.population.perturb_target]
            if not self.eta_grid:
                self.eta_grid = [self.population.eta]

    @property
    def is_toy(self) -> bool:
        return self.population is not None

    @classmethod
    def from_dict(cls, data: Dict) -> 'ExperimentConfig':
        reject_unknown(data, CONFIG_KEYS, "experiment config")
        data = dict(data)
        toy_defaults = load_toy_defaults()
        grids = load_method_grids()

        if "toy_spec" in data:
            data["toy_spec"] = ToySpec.from_dict({**toy_defaults["toy_spec"], **data["toy_spec"]})
        if "population" in data:
            data["population"] = PopulationSpec.from_dict({**toy_defaults["population"], **data["population"]})
        if "methods" in data:
            methods = data["methods"]
            if isinstance(methods, dict):
                data["methods"] = [MethodSpec.from_definition(n, d, grids) for n, d in methods.items()]
            else:
                data["methods"] = [MethodSpec.from_definition(n, None, grids) for n in methods]
        if data.get("dataset") is None and data.get("population") is None:
            raise ConfigError("experiment config needs either 'dataset' or 'population'")
        return cls(**data)

    @classmethod
    def from_file(cls, path: str) -> 'ExperimentConfig':
        return cls.from_dict(load_config_file(path))

    def to_dict(self) -> Dict:
        return {
            'dataset': self.dataset,
            'toy_spec': self.toy_spec.to_dict(),
            'population': self.population.to_dict() if self.population else None,
            'scenarios': list(self.scenarios),
            'eta_grid': list(self.eta_grid),
            'methods': [m.to_dict() for m in self.methods],
            'm': self.m,
            'repetitions': self.repetitions,
            'seed': self.seed,
            'output': self.output,
            'n_permutations': self.n_permutations,
        }


def format_params(params: Dict) -> str:
    return json.dumps(params, sort_keys=True)


class ResultTable:
    """Rows of per-subject, per-method accuracies"""

    def __init__(self, toy: bool = False):
        self.toy = toy
        self._rows: List[Dict] = []

    @property
    def columns(self) -> List[str]:
        return RESULT_COLUMNS + (TOY_COLUMNS if self.toy else [])

    def add(self, subject: str, method: str, params: Dict, train_acc: float, test_acc: float,
            repetition: int = 0, perturb: Optional[str] = None, eta: Optional[float] = None):
        for name, value in (("train_acc", train_acc), ("test_acc", test_acc)):
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        row = {
            'subject': subject,
            'method': method,
            'params': format_params(params),
            'train_acc': float(train_acc),
            'test_acc': float(test_acc),
            'repetition': int(repetition),
        }
        if self.toy:
            row.update({'perturb': perturb, 'eta': float(eta)})
        self._rows.append(row)

    def __len__(self) -> int:
        return len(self._rows)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self._rows, columns=self.columns)

    def to_csv(self, path: str):
        self.to_frame().to_csv(path, index=False)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> 'ResultTable':
        missing = [c for c in RESULT_COLUMNS if c not in frame.columns]
        if missing:
            raise ValueError(f"result table lacks columns {missing}")
        table = cls(toy=all(c in frame.columns for c in TOY_COLUMNS))
        table._rows = frame[table.columns].to_dict('records')
        return table

    @classmethod
    def from_csv(cls, path: str) -> 'ResultTable':
        return cls.from_frame(pd.read_csv(path, dtype={'subject': str, 'params': str}))
