#!/usr/bin/env python3
"""Test script to verify all imports work correctly"""

for name in ("numpy", "scipy", "mpmath", "pandas", "sklearn", "joblib", "pydantic", "dotenv",
             "prometheus_client", "psutil"):
    try:
        __import__(name)
        print(f"✓ {name} imported successfully")
    except ImportError as e:
        print(f"✗ {name} import failed: {e}")

try:
    from regularity_lab.app.main import main
    print("✓ regularity_lab CLI imported successfully")
except ImportError as e:
    print(f"✗ regularity_lab CLI import failed: {e}")

print("\nAll import tests completed!")
