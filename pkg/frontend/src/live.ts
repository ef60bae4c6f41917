// Live experiment view state: rolling per-series sample windows fed by the
// event stream, with dedupe so a stream reconnect (which replays history)
// never duplicates points.

import { TERMINAL_STATES } from "./types.js";
import type { StatusEvent, Verdict } from "./types.js";

export const ROLLING_WINDOW = 300;

export interface SeriesPoint {
  t: number;
  mbps: number;
}

export interface LiveView {
  experimentId: string;
  state: string;
  driverKind: string;
  series: Map<string, SeriesPoint[]>;
  seen: Set<string>;
  verdict: Verdict | null;
  attenuationDb: number;
  samplesReceived: number;
}

export function newLiveView(experimentId: string, driverKind = ""): LiveView {
  return {
    experimentId,
    state: "unknown",
    driverKind,
    series: new Map(),
    seen: new Set(),
    verdict: null,
    attenuationDb: 0,
    samplesReceived: 0,
  };
}

export function seriesKey(core: string, traffic: string): string {
  return `${core} ${traffic}`;
}

export function applyEvent(view: LiveView, event: StatusEvent): LiveView {
  const data = event.data;
  if (data.experiment_id !== view.experimentId) return view;
  switch (event.event) {
    case "state": {
      view.state = data.state;
      if (data.verdict) view.verdict = data.verdict;
      break;
    }
    case "sample": {
      const sample = data.sample;
      if (!sample) break;
      const dedupe = `${sample.core}|${sample.traffic}|${sample.t_offset_s}`;
      if (view.seen.has(dedupe)) break;
      view.seen.add(dedupe);
      const key = seriesKey(sample.core, sample.traffic);
      let points = view.series.get(key);
      if (!points) {
        points = [];
        view.series.set(key, points);
      }
      points.push({ t: sample.t_offset_s, mbps: sample.mbps });
      if (points.length > ROLLING_WINDOW) points.splice(0, points.length - ROLLING_WINDOW);
      view.samplesReceived += 1;
      break;
    }
    case "attenuation": {
      if (typeof data.attenuation_db === "number") view.attenuationDb = data.attenuation_db;
      break;
    }
    default:
      break;
  }
  return view;
}

export function isTerminal(view: LiveView): boolean {
  return TERMINAL_STATES.has(view.state);
}

// The steering control is live only for a sim-ota experiment that is
// currently measuring.
export function attenuationEnabled(view: LiveView): boolean {
  return view.driverKind === "sim-ota" && view.state === "running";
}

export function seriesTail(view: LiveView, key: string, count: number): number[] {
  const points = view.series.get(key) ?? [];
  return points.slice(-count).map((p) => p.mbps);
}
