// Shapes mirrored from the orchestrator's REST responses.

export type DecisionKind = "approved" | "clarification_required" | "denied";

export interface Question {
  field: string;
  question: string;
}

export interface SubmitResponse {
  decision: DecisionKind;
  experiment_ids?: string[];
  clarification_token?: string;
  questions?: Question[];
  reason?: string;
}

export interface KpiCriterion {
  metric: string;
  comparator: string;
  threshold: number;
  unit: string;
  traffic_kinds: string[];
}

export interface Verdict {
  criterion: KpiCriterion;
  per_run: Record<string, { observed: number; pass: boolean }>;
  overall_pass: boolean;
  partial: boolean;
}

export interface SamplePayload {
  core: string;
  traffic: string;
  t_offset_s: number;
  mbps: number;
}

export interface EventData {
  experiment_id: string;
  state: string;
  timestamp: string;
  sample?: SamplePayload;
  verdict?: Verdict | null;
  attenuation_db?: number;
}

export interface StatusEvent {
  event: string;
  data: EventData;
}

export interface ExperimentStatus {
  experiment_id: string;
  state: string;
  modality?: string;
  driver_kind?: string;
  app_under_test?: string;
  target_cores?: string[];
  kpi?: KpiCriterion;
  descriptor_id?: string;
  submitted_at?: string;
  finished_at?: string | null;
  verdict?: Verdict | null;
  log?: [string, string, string][];
}

export interface ExperimentListEntry {
  experiment_id: string;
  state: string;
  modality?: string;
  target_cores?: string[];
  submitted_at?: string;
  finished_at?: string | null;
  descriptor_id?: string;
  descriptor_ref?: string;
}

export const TERMINAL_STATES = new Set(["completed", "failed", "cancelled"]);
