/** Payload shapes mirroring the review API. The dashboard never computes
 * scores; every number rendered comes verbatim from these payloads. */

export interface FlagJson {
  rank: number;
  region_code: string;
  region_level: string;
  date: string;
  rank_score: number;
  p_value: number;
  k: number;
  observed: number | null;
  observed_corrected: number;
  predicted: number;
  residual_per_capita: number;
  annotations: string[];
  reviewed: boolean;
  reviewer_note: string | null;
}

export interface FlagsResponse {
  date: string;
  flags: FlagJson[];
}

export interface DetailResponse {
  region_code: string;
  region_level: string;
  population: number;
  dates: string[];
  raw: (number | null)[];
  imputed: (number | null)[];
  corrected: (number | null)[];
  labels: Record<string, string>;
  annotations: Record<string, string[]>;
  regime_starts: string[];
  weekday_factors: number[] | null;
  ar_weights: number[] | null;
  short_series: boolean;
  flag: FlagJson | null;
}

export interface HealthResponse {
  status: string;
  built_at: string;
  streams: number;
  last_scored: string | null;
}

export interface ReviewBody {
  reviewed: boolean;
  note: string | null;
}

export interface ReviewResponse {
  status: string;
  flag: FlagJson;
}

export interface RetrainResponse {
  status: string;
}
