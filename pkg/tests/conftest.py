def pytest_configure(config):
    config.addinivalue_line(
        "markers", "secondary: exercises the sandbox component over its wire protocol")
