"""
Configuration Management

Central configuration for the sinkwalk simulator with support for environment
variables, validation and different deployment environments.

Features:
- Environment-based configuration (prefix ``SINKWALK_``)
- Configuration validation with Pydantic
- Development, testing and production presets
- Logging configuration
- Output, cache and worker-pool settings
"""

import logging
import os
from enum import Enum
from typing import Optional

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Environment(str, Enum):
    """Deployment environment types"""
    DEVELOPMENT = "development"
    TESTING = "testing"
    PRODUCTION = "production"


class LogLevel(str, Enum):
    """Logging levels"""
    DEBUG = "DEBUG"
    INFO = "INFO"
    WARNING = "WARNING"
    ERROR = "ERROR"
    CRITICAL = "CRITICAL"


class Settings(BaseSettings):
    """
    Application settings with environment variable support

    All settings can be overridden via environment variables with the prefix 'SINKWALK_'
    For example: SINKWALK_OUTPUT_DIR=/tmp/runs
    """

    # Application settings
    environment: Environment = Field(default=Environment.DEVELOPMENT, description="Deployment environment")
    debug: bool = Field(default=True, description="Enable debug mode")
    log_level: LogLevel = Field(default=LogLevel.INFO, description="Logging level")

    # Output and cache settings
    output_dir: str = Field(default="results", description="Default output directory for CLI runs")
    cache_dir: str = Field(default="results/cache", description="Result cache directory path")
    enable_cache: bool = Field(default=True, description="Enable result caching")

    # Computation settings
    default_steps: int = Field(default=36, description="Default walk horizon T")
    mc_chunk_size: int = Field(default=100_000, description="Monte Carlo trials per RNG chunk")
    max_workers: int = Field(default=4, description="Maximum concurrent Monte Carlo workers")
    max_lattice_cells: int = Field(default=20_000_000, description="Memory guard for classical lattice DP")

    # Detection settings
    saturation_ceiling: float = Field(
        default=0.1, description="Maximum expected detected photons per pulse in one time bin"
    )

    model_config = SettingsConfigDict(
        env_prefix="SINKWALK_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    @field_validator('output_dir', 'cache_dir')
    def validate_directory(cls, v):
        """Reject blank directory names"""
        if not v or not str(v).strip():
            raise ValueError("Directory path must not be empty")
        return v

    @field_validator('default_steps')
    def validate_default_steps(cls, v):
        """Validate default horizon is reasonable"""
        if v < 1:
            raise ValueError("Default steps must be at least 1")
        if v > 100_000:
            raise ValueError("Default steps should not exceed 100000")
        return v

    @field_validator('mc_chunk_size')
    def validate_chunk_size(cls, v):
        """Validate Monte Carlo chunk size"""
        if v <= 0:
            raise ValueError("Monte Carlo chunk size must be positive")
        return v

    @field_validator('max_workers')
    def validate_max_workers(cls, v):
        """Validate worker count is reasonable"""
        if v <= 0:
            raise ValueError("Max workers must be positive")
        if v > 64:
            raise ValueError("Max workers should not exceed 64")
        return v

    @field_validator('max_lattice_cells')
    def validate_max_lattice_cells(cls, v):
        if v <= 0:
            raise ValueError("Max lattice cells must be positive")
        return v

    @field_validator('saturation_ceiling')
    def validate_saturation_ceiling(cls, v):
        """Validate saturation ceiling lies in (0, 1]"""
        if not 0 < v <= 1:
            raise ValueError("Saturation ceiling must be in (0, 1] photons per pulse")
        return v

    def is_development(self) -> bool:
        """Check if running in development environment"""
        return self.environment == Environment.DEVELOPMENT

    def is_testing(self) -> bool:
        """Check if running in testing environment"""
        return self.environment == Environment.TESTING

    def is_production(self) -> bool:
        """Check if running in production environment"""
        return self.environment == Environment.PRODUCTION

    def get_log_level(self) -> int:
        """Get numeric log level for Python logging"""
        return getattr(logging, self.log_level.value)

    def configure_logging(self):
        """Configure application logging based on settings"""
        log_format = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

        if self.is_development():
            log_format = "%(asctime)s - %(name)s - %(levelname)s - %(filename)s:%(lineno)d - %(message)s"

        logging.basicConfig(
            level=self.get_log_level(),
            format=log_format,
            datefmt="%Y-%m-%d %H:%M:%S"
        )

        if not self.is_development():
            logging.getLogger("asyncio").setLevel(logging.WARNING)

        logger = logging.getLogger(__name__)
        logger.debug(f"Logging configured for {self.environment.value} environment at {self.log_level.value} level")


class DevelopmentSettings(Settings):
    """Development environment specific settings"""

    environment: Environment = Environment.DEVELOPMENT
    debug: bool = True
    log_level: LogLevel = LogLevel.INFO


class TestingSettings(Settings):
    """Testing environment specific settings"""

    environment: Environment = Environment.TESTING
    debug: bool = True
    log_level: LogLevel = LogLevel.WARNING
    enable_cache: bool = False  # Every test computes from scratch
    mc_chunk_size: int = 50_000
    max_workers: int = 2


class ProductionSettings(Settings):
    """Production environment specific settings"""

    environment: Environment = Environment.PRODUCTION
    debug: bool = False
    log_level: LogLevel = LogLevel.WARNING
    enable_cache: bool = True


def get_settings(configure: bool = True) -> Settings:
    """
    Get settings instance based on environment

    Args:
        configure: Also configure stdlib logging from the settings

    Returns:
        Configured settings instance for the current environment
    """
    env = os.getenv("SINKWALK_ENVIRONMENT", "development").lower()

    if env == "testing":
        current = TestingSettings()
    elif env == "production":
        current = ProductionSettings()
    else:
        current = DevelopmentSettings()

    if configure:
        current.configure_logging()

    return current


def create_env_file(output_path: str = ".env.sample"):
    """
    Create a sample environment file with all available settings

    Args:
        output_path: Path to create the sample env file
    """
    sample_content = """# sinkwalk configuration
# Copy this file to .env and customize for your environment

# Application Environment
SINKWALK_ENVIRONMENT=development
SINKWALK_DEBUG=true
SINKWALK_LOG_LEVEL=INFO

# Output and Cache
SINKWALK_OUTPUT_DIR=results
SINKWALK_CACHE_DIR=results/cache
SINKWALK_ENABLE_CACHE=true

# Computation
SINKWALK_DEFAULT_STEPS=36
SINKWALK_MC_CHUNK_SIZE=100000
SINKWALK_MAX_WORKERS=4
SINKWALK_MAX_LATTICE_CELLS=20000000

# Detection
SINKWALK_SATURATION_CEILING=0.1
"""

    with open(output_path, 'w') as f:
        f.write(sample_content)

    print(f"Sample environment file created at {output_path}")


# Global settings instance
settings = get_settings(configure=False)


__all__ = [
    'Settings',
    'DevelopmentSettings',
    'TestingSettings',
    'ProductionSettings',
    'Environment',
    'LogLevel',
    'get_settings',
    'create_env_file',
    'settings'
]
