#!/usr/bin/env python3
"""
Demo script for sinkwalk

This script demonstrates the simulator including:
- Hadamard walk recurrence in the reset and continual schemes
- Leaky sinks
- The classical baseline
- A simulated loop experiment with detector counts
- Service caching and health

Run with: python demo_recurrence.py
"""

import logging
import shutil
import sys
from pathlib import Path

import numpy as np

# Add package to path
sys.path.append(str(Path(__file__).parent))

from sinkwalk import ServiceConfig, SimulationService
from sinkwalk.classical_baseline import LatticeWalkSpec
from sinkwalk.experiment_model import ImperfectionParams
from sinkwalk.charts import QUANTUM_POLYA
from sinkwalk.monitoring import SinkSchedule
from sinkwalk.walk_core import InitialSpec, hadamard_coin

# Configure logging
logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

DEMO_CACHE = "demo_cache"


def demo_recurrence(service: SimulationService):
    """Demonstrate the two recurrence schemes"""
    logger.info("=== Demo: Recurrence Schemes ===")

    series = service.get_recurrence(InitialSpec.right(), hadamard_coin(), 40)
    for t in (4, 8, 20, 40):
        logger.info(f"T={t:>2}: P_continual={series.P_continual[t - 1]:.4f}  P_reset={series.P_reset[t - 1]:.4f}")
    logger.info(f"✓ Continual limit for the Hadamard walk: 2/pi = {QUANTUM_POLYA:.4f}")


def demo_leaky_sink(service: SimulationService):
    """Demonstrate a sink that lets some amplitude through"""
    logger.info("\n=== Demo: Leaky Sink ===")

    for residual in (0.0, 0.01, 0.1):
        schedule = SinkSchedule.origin(residual_transmission=residual)
        series = service.get_recurrence(InitialSpec.right(), hadamard_coin(), 10, "continual", schedule)
        logger.info(f"residual={residual:<5} q(0,4)={series.q_first_return[3]:.4f}  P_continual(10)={series.final_continual:.4f}")


def demo_classical(service: SimulationService):
    """Demonstrate the classical baseline in one to three dimensions"""
    logger.info("\n=== Demo: Classical Baseline ===")

    for dimension in (1, 2, 3):
        series = service.get_classical(LatticeWalkSpec(dimension), 100)['series']
        logger.info(
            f"d={dimension}: P_continual(100)={series.polya_from_q:.4f}  P_reset(100)={series.reset_recurrence:.4f}"
        )

    result = service.get_classical(LatticeWalkSpec(1), 20, trials=50_000, seed=7)
    mc = result['monte_carlo']
    worst = float(np.max(np.abs(mc.z_scores(result['series'].q_first_return[:mc.horizon]))))
    logger.info(f"✓ Monte Carlo with {mc.trials} trials, largest |z| = {worst:.2f}")


def demo_experiment(service: SimulationService):
    """Demonstrate a simulated loop experiment"""
    logger.info("\n=== Demo: Simulated Experiment ===")

    params = ImperfectionParams(sink_residual_transmission=0.0)
    result = service.run_experiment(params, hadamard_coin(), 12, mode="sampled", seed=2024, with_envelopes=False)
    for t in (2, 4, 8, 12):
        row = result.probabilities.loc[t]
        logger.info(
            f"t={t:>2}: p={row['p_origin']:.4f}±{row['sigma_p_origin']:.4f}  "
            f"q={row['q_first_return']:.4f}±{row['sigma_q_first_return']:.4f}"
        )

    report = service.get_bin_report(40)
    logger.info(f"✓ Time bins interlace from step {report.first_interlaced_step}, "
                f"first collision at step {report.first_collision_step}")


def demo_service_health(service: SimulationService):
    """Demonstrate service health monitoring"""
    logger.info("\n=== Demo: Service Health ===")

    health = service.get_service_health()
    logger.info(f"✓ Service: {health['service_name']}")
    logger.info(f"✓ Status: {health['status']}")
    logger.info(f"✓ Runs: {health['runs']}, failures: {health['failures']}")
    logger.info(f"✓ Cache hit rate: {health.get('hit_rate', 0.0):.2f}")


def main():
    """Run all demos"""
    logger.info("Starting sinkwalk Demo")
    logger.info("=" * 50)

    service = SimulationService(ServiceConfig(cache_dir=DEMO_CACHE))
    try:
        demo_recurrence(service)
        demo_leaky_sink(service)
        demo_classical(service)
        demo_experiment(service)
        # Served from the cache this time
        demo_recurrence(service)
        demo_service_health(service)

    except KeyboardInterrupt:
        logger.info("\nDemo interrupted by user")
    except Exception as e:
        logger.error(f"Demo failed with error: {e}")
        raise
    finally:
        logger.info("\n=== Cleanup ===")
        service.clear_cache()
        shutil.rmtree(DEMO_CACHE, ignore_errors=True)
        logger.info("✓ Cache cleared")

    logger.info("\n" + "=" * 50)
    logger.info("Demo completed!")


if __name__ == "__main__":
    main()
