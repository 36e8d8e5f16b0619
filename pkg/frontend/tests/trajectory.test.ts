import { describe, expect, it } from "vitest";

import { buildSeries, formatSpeedup } from "../src/trajectory.js";
import type { TrajectoryPayload } from "../src/types.js";

function payload(values: Array<[number, number]>): TrajectoryPayload {
  return {
    steps: values.map(([cumulative, step], i) => ({
      id: `${i}`.repeat(64).slice(0, 64),
      short: `${i}`.repeat(12),
      transformation_name: i === 0 ? null : `step-${i}`,
      best_time_ms: 100 / cumulative,
      cumulative_speedup: cumulative,
      step_speedup: step,
      best_gflops: null,
      percent_of_reference: null,
    })),
  };
}

describe("buildSeries", () => {
  it("passes server numbers through untouched", () => {
    const series = buildSeries(payload([[1, 1], [2, 2], [4, 2]]));
    expect(series.cumulative.map((p) => p.value)).toEqual([1, 2, 4]);
    expect(series.step.map((p) => p.value)).toEqual([1, 2, 2]);
  });

  it("flags regressions below 1.0 without clamping", () => {
    const series = buildSeries(payload([[1, 1], [0.5, 0.5]]));
    expect(series.step[1].regression).toBe(true);
    expect(series.step[1].value).toBe(0.5);
    expect(series.cumulative[1].regression).toBe(true);
  });

  it("single seed gives one unit point", () => {
    const series = buildSeries(payload([[1, 1]]));
    expect(series.cumulative).toHaveLength(1);
    expect(series.cumulative[0].value).toBe(1);
    expect(series.cumulative[0].regression).toBe(false);
  });
});

describe("formatSpeedup", () => {
  it("renders to the displayed precision", () => {
    expect(formatSpeedup(2).startsWith("2.00")).toBe(true);
    expect(formatSpeedup(0.25)).toBe("0.25x");
  });
});
