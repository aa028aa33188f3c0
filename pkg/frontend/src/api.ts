import type {
  DetailResponse,
  FlagsResponse,
  HealthResponse,
  ReviewBody,
  ReviewResponse,
  RetrainResponse,
} from "./types";

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly detail: string,
  ) {
    super(`API ${status}: ${detail}`);
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  let res: Response;
  try {
    res = await fetch(url, init);
  } catch (err) {
    throw new ApiError(0, err instanceof Error ? err.message : "network failure");
  }
  if (!res.ok) {
    let detail = res.statusText;
    try {
      const body = (await res.json()) as { detail?: string };
      if (body.detail) detail = body.detail;
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiError(res.status, detail);
  }
  return (await res.json()) as T;
}

/** Thin typed client over the review API. */
export class ApiClient {
  constructor(private readonly baseUrl: string = "") {}

  health(): Promise<HealthResponse> {
    return request(`${this.baseUrl}/health`);
  }

  flags(date: string): Promise<FlagsResponse> {
    return request(`${this.baseUrl}/flags?date=${encodeURIComponent(date)}`);
  }

  detail(region: string, date: string, window = 120): Promise<DetailResponse> {
    const params = new URLSearchParams({ date, window: String(window) });
    return request(
      `${this.baseUrl}/streams/${encodeURIComponent(region)}/detail?${params}`,
    );
  }

  review(region: string, date: string, body: ReviewBody): Promise<ReviewResponse> {
    return request(
      `${this.baseUrl}/flags/${encodeURIComponent(region)}/${encodeURIComponent(date)}/review`,
      {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(body),
      },
    );
  }

  retrain(): Promise<RetrainResponse> {
    return request(`${this.baseUrl}/retrain`, { method: "POST" });
  }
}
