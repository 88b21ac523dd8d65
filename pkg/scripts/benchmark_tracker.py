"""
Throughput Benchmark for the Tracker
Measures: tracking-loop fps on a synthetic 640x480 sequence with one target
"""
import os
import sys
import statistics

# Add parent to path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from app.core.config import load_settings
from app.schemas.bench import BackgroundSpec, ScenarioSpec, TargetSpec
from app.schemas.frame import BoundingBox
from app.services.synth_bench import evaluate, generate, throughput
from app.services.tracker import run_sequence

FRAMES = 100
RUNS = 3


def build_scenario(n_frames=FRAMES, width=640, height=480):
    """One red square drifting across a noisy gray background"""
    return ScenarioSpec(
        width=width,
        height=height,
        n_frames=n_frames,
        background=BackgroundSpec(kind="noise", mean=128, sigma=4),
        targets=[TargetSpec(
            id=1,
            bbox=BoundingBox(x=60, y=80, w=48, h=48),
            velocity=(2.0, 1.0),
            appear_frame=10,
        )],
        rng_seed=7,
    )


def main():
    print("=" * 50)
    print("🎯 Tracker Throughput Benchmark")
    print("=" * 50)

    settings = load_settings()
    frames, truth = generate(build_scenario())
    print(f"\n📹 Sequence: {len(frames)} frames, {frames[0].width}x{frames[0].height}")

    print(f"\n⏱️ Timing {RUNS} runs...")
    report = throughput(frames, settings, RUNS)
    for i, fps in enumerate(report.samples):
        print(f"  Run {i+1}: {fps:.1f} fps")

    run = run_sequence(frames, settings)
    quality = evaluate(run.records, truth, fps=run.fps)

    print("\n" + "=" * 50)
    print("📊 RESULTS SUMMARY")
    print("=" * 50)
    print(f"{'Metric':<20} {'Value':<15}")
    print("-" * 35)
    print(f"{'Median fps':<20} {report.median_fps:<15.1f}")
    print(f"{'Spread (stdev)':<20} {statistics.pstdev(report.samples):<15.2f}")
    print(f"{'Mean IoU':<20} {quality.mean_iou:<15.3f}")
    print(f"{'Success rate':<20} {quality.success_rate:<15.1%}")
    print("=" * 50)

    # Target: 20 fps at 640x480
    if report.median_fps >= 20:
        print("✅ Real-time target MET!")
    else:
        print("⚠️ Below the 20 fps real-time target")


if __name__ == "__main__":
    main()
