// Wire types mirroring the service API.

export interface RleMask {
  width: number;
  height: number;
  /** Alternating run lengths over row-major order; first run counts zeros. */
  runs: number[];
}

export interface ExpansionStats {
  seed_count: number;
  expanded_count: number;
  coverage: number;
}

export interface ExpansionResponse {
  mask: RleMask;
  stats: ExpansionStats;
}

export interface SessionInfo {
  session_id: string;
  width: number;
  height: number;
}

export interface ServiceErrorBody {
  stage: string;
  message: string;
}

export type Point = [number, number]; // [x, y] pixel coordinates
export type Ring = Point[];
