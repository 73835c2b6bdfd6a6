"""Ready-made synthetic drift scenarios shaped like Kyoto2006+ traffic.

Three periods stand in for the IID / NEAR / FAR year ranges: the
generator's period years are 2006, 2011 and 2014, so the default
:class:`~swapcon.flowdata.SplitConfig` routes them without changes.
"""

from __future__ import annotations

from .flowdata import (
    CategoricalFeatureModel,
    DriftSpec,
    FeatureDrift,
    NumericFeatureModel,
    SplitConfig,
)

SERVICES = ["dns", "http", "smtp", "ssh", "ftp", "smb", "rdp", "other"]
FLAGS = ["S0", "SF", "REJ", "RSTO", "RSTR", "SH", "OTH"]


def kyoto_like_spec(seed: int = 0, records_per_period=(59_556, 6_000, 6_000),
                    near_strength: float = 0.5, far_strength: float = 1.0) -> DriftSpec:
    """Twelve numeric counters/rates, service and flag, with a fixed concept.

    NEAR applies ``near_strength`` and FAR ``far_strength`` times the base
    drift schedule: traffic volumes grow, connection counts rise, error
    rates widen and the service mix moves toward web and remote access.
    """
    # counters are log-normal, rates logit-normal and mostly near zero
    numeric = [
        NumericFeatureModel("duration", loc=0.5, std=1.0, transform="exp", weight=0.3),
        NumericFeatureModel("src_bytes", loc=6.0, std=1.0, transform="exp", weight=-0.8),
        NumericFeatureModel("dst_bytes", loc=7.0, std=1.2, transform="exp", weight=-0.6),
        NumericFeatureModel("count", loc=1.5, std=0.8, transform="exp", weight=0.9),
        NumericFeatureModel("same_srv_rate", loc=-1.5, std=1.0, transform="logistic", weight=-0.5),
        NumericFeatureModel("serror_rate", loc=-2.5, std=1.0, transform="logistic", weight=1.2),
        NumericFeatureModel("srv_serror_rate", loc=-2.5, std=1.0, transform="logistic", weight=0.6),
        NumericFeatureModel("dst_host_count", loc=3.0, std=0.8, transform="exp", weight=0.7),
        NumericFeatureModel("dst_host_srv_count", loc=2.5, std=0.8, transform="exp", weight=-0.4),
        NumericFeatureModel("dst_host_same_src_port_rate", loc=-2.0, std=1.0, transform="logistic",
                            weight=0.5),
        NumericFeatureModel("dst_host_serror_rate", loc=-2.5, std=1.0, transform="logistic",
                            weight=0.9),
        NumericFeatureModel("dst_host_srv_serror_rate", loc=-2.5, std=1.0, transform="logistic",
                            weight=0.4),
    ]
    categorical = [
        CategoricalFeatureModel("service", SERVICES, effects={
            "dns": -0.6, "http": -0.3, "smtp": 0.2, "ssh": 0.8, "ftp": 0.4,
            "smb": 1.0, "rdp": 0.9, "other": 0.0}),
        CategoricalFeatureModel("flag", FLAGS, effects={
            "S0": 1.2, "SF": -0.9, "REJ": 0.7, "RSTO": 0.3, "RSTR": 0.2, "SH": 0.5, "OTH": 0.0}),
    ]
    base_shift = {
        "src_bytes": 1.5, "dst_bytes": 1.2, "count": 2.0, "dst_host_count": 1.5,
        "dst_host_srv_count": 1.0, "serror_rate": 1.0, "duration": 0.8,
    }
    base_scale = {"serror_rate": 1.6, "dst_host_serror_rate": 1.5, "same_srv_rate": 1.4}
    strengths = [0.0, near_strength, far_strength]
    schedules = []
    for m in numeric:
        shift = base_shift.get(m.name, 0.0)
        scale = base_scale.get(m.name, 1.0)
        schedules.append(FeatureDrift(
            m.name,
            mean_shift=[shift * s for s in strengths],
            scale=[1.0 + (scale - 1.0) * s for s in strengths],
        ))
    uniform_services = {s: 1.0 for s in SERVICES}
    shifted_services = {"dns": 0.3, "http": 3.0, "smtp": 0.5, "ssh": 2.0, "ftp": 0.3,
                        "smb": 1.0, "rdp": 2.5, "other": 1.0}

    def mix(strength):
        return {s: (1 - strength) * uniform_services[s] + strength * shifted_services[s]
                for s in SERVICES}

    category_weights = [{"service": mix(s)} for s in strengths]
    return DriftSpec(
        numeric=numeric,
        categorical=categorical,
        schedules=schedules,
        category_weights=category_weights,
        n_periods=3,
        records_per_period=list(records_per_period),
        years=[2006, 2011, 2014],
        interactions=[("count", "serror_rate", 0.6), ("src_bytes", "dst_host_count", -0.4)],
        bias=0.0,
        seed=seed,
    )


def kyoto_like_split_config(seed: int = 0, test_per_class: int = 2000) -> SplitConfig:
    return SplitConfig(test_per_class=test_per_class, seed=seed)
