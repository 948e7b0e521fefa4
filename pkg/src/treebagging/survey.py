"""Charity-survey schema, answer codings, and CSV ingest."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ArmSet, ContextSchema, Feature, ObservationLog, ValidationError

# main-experiment charities (the Salvation Army only ran in the pilots)
CHARITIES = ArmSet(("aipac", "blm", "zuckerberg", "clinton", "green", "nra", "peta", "planned"))
CHARITY_NAMES = {
    "aipac": "American Israel Public Affairs Committee",
    "blm": "Black Lives Matter",
    "zuckerberg": "Chan Zuckerberg Initiative",
    "clinton": "Clinton Foundation",
    "green": "Greenpeace",
    "nra": "National Rifle Association",
    "peta": "People for the Ethical Treatment of Animals",
    "planned": "Planned Parenthood",
    "salvation": "Salvation Army",
}

VIEWS = ("views_immigration", "views_global_warming", "views_right_bear_arms", "views_abortion")
NEWS = ("news_fox", "news_cnn", "news_nyt", "news_wapo", "news_wsj")

SURVEY_SCHEMA = ContextSchema(
    features=(
        Feature("age", "integer-ordinal", 18, 99),
        Feature("male", "binary", 0, 1),
        Feature("race", "binary", 0, 1),
        Feature("married", "binary", 0, 1),
        Feature("last_donation", "integer-ordinal", 1, 4),
        Feature("political_leaning", "integer-ordinal", 1, 7),
        Feature("religious", "binary", 0, 1),
        Feature("rural", "binary", 0, 1),
        *(Feature(v, "integer-ordinal", 1, 5) for v in VIEWS),
        *(Feature(v, "integer-ordinal", 1, 6) for v in NEWS),
        Feature("social_media", "integer-ordinal", 1, 6),
    ),
    outcome_range=(-10.0, 10.0),
)

_AGREE = ["strongly disagree", "somewhat disagree", "neither agree nor disagree",
          "somewhat agree", "strongly agree"]
_FREQ = ["daily", "several times a week", "once a week", "several times a month",
         "several times a year", "once a year or less"]

# answer text -> code, lower-cased
ANSWER_CODES: dict[str, dict[str, int]] = {
    "male": {"male": 1, "female": 0, "other": 0, "prefer not to say": 0},
    "race": {"white": 1, "black or african american": 0, "american indian or alaska native": 0,
             "asian": 0, "native hawaiian or pacific islander": 0, "other": 0},
    "married": {"married": 1, "single": 0, "widowed": 0, "divorced or separated": 0},
    "last_donation": {"within this month": 1, "within this year": 2,
                      "more than a year ago": 3, "never": 4},
    "political_leaning": {"strong democrat": 1, "moderate democrat": 2, "leaning democrat": 3,
                          "independent/none": 4, "leaning republican": 5,
                          "moderate republican": 6, "strong republican": 7},
    "religious": {"very religious": 1, "moderately religious": 1, "not religious": 0},
    "rural": {"rural": 1, "suburban": 1, "urban": 0},
    **{v: {a: i + 1 for i, a in enumerate(_AGREE)} for v in VIEWS},
    **{v: {a: i + 1 for i, a in enumerate(_FREQ)} for v in (*NEWS, "social_media")},
}
ANSWER_CODES["social_media"]["several times year"] = 5

ATTENTION_COLUMN = "attention_check"
OPTIONAL_COLUMNS = ("t", "batch", ATTENTION_COLUMN)


def is_liberal(X: np.ndarray, schema: ContextSchema = SURVEY_SCHEMA) -> np.ndarray:
    return X[:, schema.index("political_leaning")] < 4


def is_young(X: np.ndarray, schema: ContextSchema = SURVEY_SCHEMA) -> np.ndarray:
    return X[:, schema.index("age")] < 30


def is_pro_choice(X: np.ndarray, schema: ContextSchema = SURVEY_SCHEMA) -> np.ndarray:
    return X[:, schema.index("views_abortion")] <= 3


def subgroup_predicates(schema: ContextSchema = SURVEY_SCHEMA) -> dict:
    """Named subgroup masks used in the summary tables and figures."""
    return {
        "liberals": lambda X: is_liberal(X, schema),
        "conservatives": lambda X: ~is_liberal(X, schema),
        "age_below_30": lambda X: is_young(X, schema),
        "age_above_30": lambda X: ~is_young(X, schema),
        "pro_choice": lambda X: is_pro_choice(X, schema),
        "anti_choice": lambda X: ~is_pro_choice(X, schema),
    }


def code_answer(feature: str, value: str, schema: ContextSchema = SURVEY_SCHEMA) -> float:
    """Map a raw answer (label or already-coded number) to its numeric code."""
    raw = str(value).strip()
    feat = schema.features[schema.index(feature)]
    try:
        code = float(raw)
    except ValueError:
        table = ANSWER_CODES.get(feature)
        if table is None or raw.lower() not in table:
            raise ValidationError(f"{feature}: unrecognised answer {raw!r}") from None
        code = float(table[raw.lower()])
    if not feat.low <= code <= feat.high:
        raise ValidationError(f"{feature}: value {raw!r} outside [{feat.low}, {feat.high}]")
    return code


@dataclass
class IngestReport:
    rows_read: int
    dropped_attention: int
    rows_kept: int


def ingest_survey_csv(path: str | Path, schema: ContextSchema = SURVEY_SCHEMA,
                      arms: ArmSet = CHARITIES) -> tuple[ObservationLog, IngestReport]:
    """Read survey responses into an :class:`ObservationLog`.

    Columns: every schema feature, ``arm`` (alias of the charity shown) and
    ``outcome``. Optional: ``t``, ``batch``, ``e_<alias>`` propensities
    (uniform if absent) and ``attention_check`` (the alias the respondent
    reported seeing; mismatching rows are dropped).
    """
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        rows = list(reader)
    prop_cols = [f"e_{a}" for a in arms.aliases]
    known = set(schema.names) | {"arm", "outcome"} | set(prop_cols) | set(OPTIONAL_COLUMNS)
    unknown = [c for c in header if c not in known]
    if unknown:
        raise ValidationError(f"unknown column {unknown[0]!r}")
    missing = [c for c in (*schema.names, "arm", "outcome") if c not in header]
    if missing:
        raise ValidationError(f"missing column {missing[0]!r}")
    has_e = [c in header for c in prop_cols]
    if any(has_e) and not all(has_e):
        raise ValidationError("propensity columns must be given for all arms or none")
    if not rows:
        raise ValidationError("no rows")

    kept, dropped = [], 0
    for i, r in enumerate(rows):
        arm = r["arm"].strip()
        if ATTENTION_COLUMN in r and r[ATTENTION_COLUMN] not in (None, ""):
            if r[ATTENTION_COLUMN].strip() != arm:
                dropped += 1
                continue
        kept.append((i, r))
    if not kept:
        raise ValidationError("every row failed the attention check")

    X = np.array([[code_answer(f, r[f], schema) for f in schema.names] for _, r in kept])
    w = np.array([arms.index(r["arm"].strip()) for _, r in kept])
    y = np.array([float(r["outcome"]) for _, r in kept])
    if all(has_e):
        e = np.array([[float(r[c]) for c in prop_cols] for _, r in kept])
    else:
        e = np.full((len(kept), arms.K), 1.0 / arms.K)
    if "t" in header:
        t = np.array([int(r["t"]) for _, r in kept])
    else:
        t = np.arange(1, len(kept) + 1)
    batch = np.array([int(r["batch"]) for _, r in kept]) if "batch" in header else np.ones(len(kept), int)
    log = ObservationLog(schema, arms, t, batch, X, w, y, e)
    return log, IngestReport(len(rows), dropped, len(kept))
