import os


class Config:
    DMT_THREADS = int(os.environ.get("DMT_THREADS", "1"))
    DMT_OUTPUT_DIR = os.environ.get("DMT_OUTPUT_DIR", "runs")
    DMT_LOG_LEVEL = os.environ.get("DMT_LOG_LEVEL", "INFO")
    DMT_SIGMA_MODE = os.environ.get("DMT_SIGMA_MODE", "posterior")  # posterior | beta
    DMT_CURVE_SAMPLES = int(os.environ.get("DMT_CURVE_SAMPLES", "256"))
    DMT_SAMPLER = os.environ.get("DMT_SAMPLER", "ddim:10")
