// Chart series straight out of the trajectory payload. The UI never
// recomputes speedups; it formats what the server sent, flagging
// regressions (step speedup below 1) for visual emphasis.

import type { TrajectoryPayload } from "./types.js";

export interface SeriesPoint {
  index: number;
  label: string;
  value: number;
  regression: boolean;
}

export interface TrajectorySeries {
  cumulative: SeriesPoint[];
  step: SeriesPoint[];
}

export function buildSeries(payload: TrajectoryPayload): TrajectorySeries {
  const cumulative: SeriesPoint[] = [];
  const step: SeriesPoint[] = [];
  payload.steps.forEach((entry, index) => {
    const label = entry.transformation_name ?? "seed";
    cumulative.push({
      index,
      label,
      value: entry.cumulative_speedup,
      regression: entry.cumulative_speedup < 1,
    });
    step.push({
      index,
      label,
      value: entry.step_speedup,
      regression: entry.step_speedup < 1,
    });
  });
  return { cumulative, step };
}

export function formatSpeedup(value: number): string {
  return `${value.toFixed(2)}x`;
}
