from hypothesis import HealthCheck, settings

# keep property runs reproducible across sessions
settings.register_profile(
    "repro",
    derandomize=True,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repro")
