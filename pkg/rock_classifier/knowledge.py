#### IMPORTS ####
import json
import logging
import math

from collections import Counter
from dataclasses import dataclass, field

from rock_classifier.config import get_filepath
from rock_classifier.exceptions import (EmptyMeasurements, KnowledgeBaseError,
                                        UnknownFunctionKind)


logger = logging.getLogger(__name__)

OTHER = 'other'
UNKNOWN_NAME = 'UNKNOWN'
TOLERANCE = 1e-9

FUNCTION_KINDS = ('count-at-least', 'proportion-in-range')
EXCLUSION_REASONS = ('metamorphic-indicator', 'magmatic-indicator')

DEFAULT_KB_FILE = 'data/knowledge_base.json'


#### DOMAIN TYPES ####
@dataclass(frozen=True)
class MineralGroup:
    '''Named set of mineral species, stored lower case.'''
    name: str
    members: frozenset
    overlapping: bool = False

    def __post_init__(self):
        object.__setattr__(self, 'members', frozenset(
            str(m).strip().lower() for m in self.members))
        if not self.members:
            raise KnowledgeBaseError(self.name, 'group has no members')


@dataclass(frozen=True)
class WeightedAssemblage:
    '''A group's weight and the composition range it must fall in.'''
    group: MineralGroup
    weight: float
    p_min: float
    p_max: float

    def __post_init__(self):
        for name in ('weight', 'p_min', 'p_max'):
            value = getattr(self, name)
            if not 0 <= value <= 1:
                raise KnowledgeBaseError(name, f'{value} is outside [0, 1]')
        if self.p_min > self.p_max:
            raise KnowledgeBaseError('p_min', f'{self.p_min} exceeds p_max '
                                     f'{self.p_max}')


@dataclass(frozen=True)
class ConstraintSpec:
    '''
    A check over one group's measurements.

    count-at-least holds when the group's count reaches threshold;
    proportion-in-range when its proportion lies within parameters.
    '''
    group: MineralGroup
    function_kind: str
    parameters: tuple = ()
    threshold: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, 'parameters',
                           tuple(float(p) for p in self.parameters))
        if not math.isfinite(self.threshold):
            raise KnowledgeBaseError('threshold', 'must be finite')


@dataclass(frozen=True)
class RockRule:
    rock_name: str
    assemblages: tuple
    constraints: tuple = ()
    hierarchy_node: str = ''

    def __post_init__(self):
        object.__setattr__(self, 'assemblages', tuple(self.assemblages))
        object.__setattr__(self, 'constraints', tuple(self.constraints))
        if not self.assemblages:
            raise KnowledgeBaseError(self.rock_name, 'rule has no '
                                     'assemblages')
        if not self.hierarchy_node:
            object.__setattr__(self, 'hierarchy_node', self.rock_name)

    def max_weight(self):
        '''Sum of all assemblage weights, the rule's weight ceiling.'''
        return sum(a.weight for a in self.assemblages)


@dataclass(frozen=True)
class Hierarchy:
    '''
    Rock -> group -> species trees.

    Vertices are paths such as ``Granite/feldspars/albite``; node_params
    holds weight and range for group vertices.
    '''
    vertices: tuple
    edges: tuple
    node_params: dict = field(default_factory=dict)

    def children(self, vertex):
        return [child for parent, child in self.edges if parent == vertex]

    def roots(self):
        children = {child for _, child in self.edges}
        return [v for v in self.vertices if v not in children]


@dataclass(frozen=True)
class ExclusionRule:
    '''Indicator species that vetoes the listed rocks when present.'''
    species: str
    reason: str
    applies_to: frozenset

    def __post_init__(self):
        object.__setattr__(self, 'species', str(self.species).strip().lower())
        object.__setattr__(self, 'applies_to', frozenset(self.applies_to))
        if not self.species:
            raise KnowledgeBaseError('species', 'must not be empty')


@dataclass(frozen=True)
class KnowledgeBase:
    '''
    Groups, rock rules, hierarchy, thresholds and exclusions.

    Attributes:
    -----------
    groups: tuple of MineralGroup
    rules: tuple of RockRule
    hierarchy: Hierarchy
    confidence_threshold: float
        Minimum winning weight, in (0, 1].
    dominance_threshold: float
        Minimum margin over the runner-up, in [0, 1].
    exclusions: tuple of ExclusionRule
    aliases: dict
        Lower-case spelling variant -> canonical species.
    '''
    groups: tuple
    rules: tuple
    hierarchy: Hierarchy
    confidence_threshold: float = 0.7
    dominance_threshold: float = 0.3
    exclusions: tuple = ()
    aliases: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 < self.confidence_threshold <= 1:
            raise KnowledgeBaseError('confidence_threshold',
                                     'must be in (0, 1]')
        if not 0 <= self.dominance_threshold <= 1:
            raise KnowledgeBaseError('dominance_threshold',
                                     'must be in [0, 1]')

        names = [g.name for g in self.groups]
        for i, group in enumerate(self.groups):
            for other in self.groups[i + 1:]:
                shared = group.members & other.members
                if shared and not (group.overlapping and other.overlapping):
                    raise KnowledgeBaseError(
                        f'groups[{names.index(other.name)}].members',
                        f'{sorted(shared)} also in group {group.name}; flag '
                        f'both groups as overlapping')

        for r, rule in enumerate(self.rules):
            for a, assemblage in enumerate(rule.assemblages):
                if assemblage.group.name not in names:
                    raise KnowledgeBaseError(
                        f'rules[{r}].assemblages[{a}].group',
                        f'unknown group {assemblage.group.name}')

    @property
    def rock_names(self):
        return [rule.rock_name for rule in self.rules]

    def group(self, name):
        for group in self.groups:
            if group.name == name:
                return group
        raise KeyError(name)


@dataclass
class RockClassification:
    '''Outcome of the rule-based rock decision with its audit trail.'''
    weights: dict
    w_max: float
    w_second: float
    winner: str
    label: str
    fired_exclusions: list
    proportions: dict
    trace: list

    @property
    def margin(self):
        return self.w_max - self.w_second

    def to_dict(self):
        return {'weights': self.weights, 'w_max': self.w_max,
                'w_second': self.w_second, 'margin': self.margin,
                'winner': self.winner, 'label': self.label,
                'fired_exclusions': [
                    {'species': e.species, 'reason': e.reason}
                    for e in self.fired_exclusions],
                'proportions': self.proportions,
                'trace': self.trace}


#### SPECIES NAMES ####
def canonical_species(name, kb=None):
    '''Lower-cases and strips a species name, then resolves aliases.'''
    key = str(name).strip().lower()
    if kb is not None:
        key = kb.aliases.get(key, key)

    return key


def _species_counts(measurements, kb=None):
    measurements = list(measurements)
    if not measurements:
        raise EmptyMeasurements('at least one measurement is needed')

    return Counter(canonical_species(m, kb) for m in measurements), \
        len(measurements)


def _group_count(counts, group):
    return sum(counts[species] for species in group.members)


#### PROPORTIONS AND WEIGHTS ####
def mineral_proportions(measurements, kb):
    '''
    Fraction of measurements falling in each knowledge base group.

    UNKNOWN and ungrouped species stay in the denominator.

    Parameters:
    -----------
    measurements: sequence of str
        Species name per measurement point.
    kb: KnowledgeBase

    Returns:
    --------
    dict of group name -> proportion
    '''
    counts, total = _species_counts(measurements, kb)

    return {group.name: _group_count(counts, group) / total
            for group in kb.groups}


def indicator(proportion, assemblage):
    '''1 when the proportion lies in the assemblage's range, inclusive.'''
    inside = assemblage.p_min - TOLERANCE <= proportion <= \
        assemblage.p_max + TOLERANCE

    return int(inside)


def rock_weight(proportions, rule):
    '''Raw sum of the weights of assemblages whose range is satisfied.'''
    return sum(a.weight * indicator(proportions.get(a.group.name, 0.0), a)
               for a in rule.assemblages)


def membership(mineral, group_assemblage, proportions, kb=None):
    '''
    Weight a mineral contributes through one assemblage.

    The assemblage weight if the mineral belongs to its group and the
    group's proportion is in range, otherwise 0.
    '''
    species = canonical_species(mineral, kb)
    if species not in group_assemblage.group.members:
        return 0.0

    proportion = proportions.get(group_assemblage.group.name, 0.0)

    return group_assemblage.weight * indicator(proportion, group_assemblage)


#### CONSTRAINTS ####
def evaluate_constraint(measurements, spec, kb=None):
    '''Evaluates a count-at-least or proportion-in-range constraint.'''
    counts, total = _species_counts(measurements, kb)
    count = _group_count(counts, spec.group)

    if spec.function_kind == 'count-at-least':
        return count >= spec.threshold - TOLERANCE
    if spec.function_kind == 'proportion-in-range':
        low, high = spec.parameters
        return low - TOLERANCE <= count / total <= high + TOLERANCE

    raise UnknownFunctionKind(f'unknown constraint kind '
                              f'{spec.function_kind!r}')


def _confident(w_rock, w_other, kb):
    return w_rock >= kb.confidence_threshold - TOLERANCE and \
        w_rock - w_other >= kb.dominance_threshold - TOLERANCE and \
        w_rock - w_other > TOLERANCE


def rule_fires(measurements, rule, kb):
    '''
    True when every constraint of the rule holds and the rule would win
    the confidence test against all other rules.
    '''
    if not all(evaluate_constraint(measurements, c, kb)
               for c in rule.constraints):
        return False

    proportions = mineral_proportions(measurements, kb)
    w_rock = rock_weight(proportions, rule)
    others = [rock_weight(proportions, r) for r in kb.rules
              if r.rock_name != rule.rock_name]

    return _confident(w_rock, max(others, default=0.0), kb)


def assemblage_probability(measurements, rule, kb=None):
    '''
    Product over assemblages of weight ** count times the range indicator.

    Any assemblage out of range zeroes the product.
    '''
    counts, total = _species_counts(measurements, kb)

    probability = 1.0
    for assemblage in rule.assemblages:
        count = _group_count(counts, assemblage.group)
        delta = indicator(count / total, assemblage)
        probability *= assemblage.weight ** count * delta

    return probability


#### EXCLUSIONS ####
def check_exclusions(measurements, kb, candidate_rock):
    '''Exclusion rules for candidate_rock whose species were measured.'''
    present = {canonical_species(m, kb) for m in measurements}

    return [rule for rule in kb.exclusions
            if rule.species in present and candidate_rock in rule.applies_to]


#### CLASSIFICATION ####
def classify(measurements, kb):
    '''
    Decides the rock type of a sample from its per-point mineral labels.

    The best-weighted rock wins only if its weight reaches the confidence
    threshold, beats the runner-up by the dominance threshold and no
    exclusion rule for it fired. Otherwise the label is ``other``.

    Parameters:
    -----------
    measurements: sequence of str
        Species name per measurement point; UNKNOWN allowed.
    kb: KnowledgeBase

    Returns:
    --------
    RockClassification
    '''
    measurements = list(measurements)
    proportions = mineral_proportions(measurements, kb)

    weights = {}
    trace = []
    for rule in kb.rules:
        weights[rule.rock_name] = rock_weight(proportions, rule)
        for a in rule.assemblages:
            proportion = proportions[a.group.name]
            trace.append({'rock': rule.rock_name, 'group': a.group.name,
                          'weight': a.weight, 'p_min': a.p_min,
                          'p_max': a.p_max, 'proportion': proportion,
                          'delta': indicator(proportion, a)})

    ranked = sorted(weights.values(), reverse=True)
    w_max = ranked[0] if ranked else 0.0
    w_second = ranked[1] if len(ranked) > 1 else 0.0
    # First rule in declared order among equals
    winner = next((rock for rock, w in weights.items() if w == w_max), OTHER)

    fired = check_exclusions(measurements, kb, winner)
    label = winner if _confident(w_max, w_second, kb) and not fired \
        else OTHER

    logger.debug('weights %s -> %s', weights, label)

    return RockClassification(weights, w_max, w_second, winner, label, fired,
                              proportions, trace)


#### HIERARCHY ####
def build_hierarchy(groups, rules):
    '''Derives the rock -> group -> species trees of a set of rules.'''
    vertices = []
    edges = []
    params = {}
    for rule in rules:
        root = rule.rock_name
        vertices.append(root)
        for a in rule.assemblages:
            node = f'{root}/{a.group.name}'
            vertices.append(node)
            edges.append((root, node))
            params[node] = {'weight': a.weight, 'p_min': a.p_min,
                            'p_max': a.p_max}
            for species in sorted(a.group.members):
                leaf = f'{node}/{species}'
                vertices.append(leaf)
                edges.append((node, leaf))

    return Hierarchy(tuple(vertices), tuple(edges), params)


def hierarchy_tree(kb, rock):
    '''Indented text rendering of one rock's decision tree.'''
    if rock not in kb.hierarchy.vertices:
        raise KeyError(rock)

    lines = [rock]
    for node in kb.hierarchy.children(rock):
        p = kb.hierarchy.node_params[node]
        lines.append(f'  {node.split("/")[-1]} (weight {p["weight"]}, '
                     f'[{p["p_min"]:.2f}, {p["p_max"]:.2f}])')
        lines += [f'    {leaf.split("/")[-1]}'
                  for leaf in kb.hierarchy.children(node)]

    return '\n'.join(lines)


#### PERSISTENCE ####
def knowledge_base_to_dict(kb):
    '''Plain-dict form of a knowledge base, as stored on disk.'''
    return {
        'format_version': 1,
        'confidence_threshold': kb.confidence_threshold,
        'dominance_threshold': kb.dominance_threshold,
        'groups': [{'name': g.name, 'members': sorted(g.members),
                    'overlapping': g.overlapping} for g in kb.groups],
        'aliases': dict(sorted(kb.aliases.items())),
        'rules': [{'rock': r.rock_name,
                   'assemblages': [{'group': a.group.name,
                                    'weight': a.weight, 'p_min': a.p_min,
                                    'p_max': a.p_max}
                                   for a in r.assemblages],
                   'constraints': [{'group': c.group.name,
                                    'kind': c.function_kind,
                                    'parameters': list(c.parameters),
                                    'threshold': c.threshold}
                                   for c in r.constraints]}
                  for r in kb.rules],
        'exclusions': [{'species': e.species, 'reason': e.reason,
                        'applies_to': sorted(e.applies_to)}
                       for e in kb.exclusions],
    }


def _required(entry, key, path):
    if not isinstance(entry, dict) or key not in entry:
        raise KnowledgeBaseError(f'{path}.{key}' if path else key,
                                 'missing')
    return entry[key]


def _number(entry, key, path):
    value = _required(entry, key, path)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise KnowledgeBaseError(f'{path}.{key}', f'{value!r} is not a '
                                 f'number')
    return float(value)


def _relabel(error, path):
    '''Prefixes the entry path onto an error raised by a domain type.'''
    return KnowledgeBaseError(f'{path}.{error.path}',
                              str(error).split(': ', 1)[-1])


def knowledge_base_from_dict(data):
    '''
    Builds a KnowledgeBase from its dict form.

    Raises KnowledgeBaseError naming the dotted path of the first invalid
    entry, e.g. ``rules[1].assemblages[0].p_min``.
    '''
    groups = []
    for i, entry in enumerate(_required(data, 'groups', '')):
        path = f'groups[{i}]'
        members = _required(entry, 'members', path)
        try:
            groups.append(MineralGroup(str(_required(entry, 'name', path)),
                                       members,
                                       bool(entry.get('overlapping', False))))
        except KnowledgeBaseError as e:
            raise KnowledgeBaseError(f'{path}.members', 'group has no '
                                     'members') from e
    by_name = {g.name: g for g in groups}

    def lookup(entry, path):
        name = _required(entry, 'group', path)
        if name not in by_name:
            raise KnowledgeBaseError(f'{path}.group', f'unknown group '
                                     f'{name!r}')
        return by_name[name]

    rules = []
    for r, entry in enumerate(_required(data, 'rules', '')):
        path = f'rules[{r}]'
        rock = str(_required(entry, 'rock', path))

        assemblages = []
        for a, item in enumerate(_required(entry, 'assemblages', path)):
            item_path = f'{path}.assemblages[{a}]'
            try:
                assemblages.append(WeightedAssemblage(
                    lookup(item, item_path), _number(item, 'weight',
                                                     item_path),
                    _number(item, 'p_min', item_path),
                    _number(item, 'p_max', item_path)))
            except KnowledgeBaseError as e:
                if e.path.startswith(item_path):
                    raise
                raise _relabel(e, item_path) from e

        constraints = []
        for c, item in enumerate(entry.get('constraints', [])):
            item_path = f'{path}.constraints[{c}]'
            kind = _required(item, 'kind', item_path)
            if kind not in FUNCTION_KINDS:
                raise KnowledgeBaseError(f'{item_path}.kind', f'unknown '
                                         f'constraint kind {kind!r}')
            parameters = item.get('parameters', [])
            if kind == 'proportion-in-range' and len(parameters) != 2:
                raise KnowledgeBaseError(f'{item_path}.parameters',
                                         'needs [low, high]')
            constraints.append(ConstraintSpec(
                lookup(item, item_path), kind, parameters,
                float(item.get('threshold', 0.0))))

        if not assemblages:
            raise KnowledgeBaseError(f'{path}.assemblages', 'rule has no '
                                     'assemblages')
        rules.append(RockRule(rock, assemblages, constraints))

    rock_names = {rule.rock_name for rule in rules}
    exclusions = []
    for e, entry in enumerate(data.get('exclusions', [])):
        path = f'exclusions[{e}]'
        reason = _required(entry, 'reason', path)
        if reason not in EXCLUSION_REASONS:
            raise KnowledgeBaseError(f'{path}.reason', f'unknown reason '
                                     f'{reason!r}')
        applies_to = _required(entry, 'applies_to', path)
        unknown = set(applies_to) - rock_names
        if unknown:
            raise KnowledgeBaseError(f'{path}.applies_to', f'unknown rocks '
                                     f'{sorted(unknown)}')
        species = str(_required(entry, 'species', path)).strip()
        if not species:
            raise KnowledgeBaseError(f'{path}.species', 'must not be empty')
        exclusions.append(ExclusionRule(species, reason, applies_to))

    aliases = {canonical_species(k): canonical_species(v)
               for k, v in data.get('aliases', {}).items()}

    return KnowledgeBase(
        tuple(groups), tuple(rules), build_hierarchy(groups, rules),
        _number(data, 'confidence_threshold', ''),
        _number(data, 'dominance_threshold', ''),
        tuple(exclusions), aliases)


def load_knowledge_base(filepath):
    '''Reads and validates a knowledge base JSON file.'''
    try:
        with open(filepath, encoding='utf-8') as f:
            data = json.load(f)
    except OSError as e:
        raise KnowledgeBaseError(str(filepath), f'cannot read: {e}') from e
    except json.JSONDecodeError as e:
        raise KnowledgeBaseError(str(filepath), f'invalid JSON: {e}') from e

    kb = knowledge_base_from_dict(data)
    logger.debug('Loaded knowledge base %s with rocks %s', filepath,
                 kb.rock_names)

    return kb


def save_knowledge_base(kb, filepath):
    with open(filepath, 'w', encoding='utf-8') as f:
        json.dump(knowledge_base_to_dict(kb), f, indent=2, sort_keys=True)
        f.write('\n')


def default_knowledge_base():
    '''Granite, sandstone and limestone rules shipped with the package.'''
    return load_knowledge_base(get_filepath(DEFAULT_KB_FILE))
