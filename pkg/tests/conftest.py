from hypothesis import settings

# deterministic property-test runs: same examples every invocation
settings.register_profile("repo", deadline=None, derandomize=True)
settings.load_profile("repo")
