/** JSON payloads exchanged with the labeling service. */

export interface SessionState {
  session_id: string;
  state: "awaiting-labels" | "computing" | "finished";
  iteration: number;
  labeled_count: number;
  class_count: number;
  pending_queries: number[];
  answered_count: number;
  history: RunRecord[];
}

export interface RunRecord {
  iteration: number;
  labeled_count: number;
  clustering_accuracy: number | null;
  selected_indices: number[];
  wall_time_ms: number;
}

export interface PseudoLabelsPayload {
  pseudo_label: number[];
  certainty: number[];
  display_xy: [number, number][] | null;
  pending_queries: number[];
  iteration: number;
  stale: boolean;
}

export interface DesignScoresPayload {
  scores: number[] | null;
  excluded: number[];
  iteration: number;
  stale: boolean;
}

export interface DatasetInfo {
  dataset_id: string;
  n: number;
  m: number;
  class_count: number;
}

export interface CreatedSession {
  session_id: string;
  pending_queries: number[];
}

export interface LabelAnswer {
  index: number;
  class: number;
}
