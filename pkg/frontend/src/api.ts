/** Typed client for the review service API. */

export type Verdict = "kept" | "rejected_hallucination" | "rejected_unrealistic";

export interface AnnotationBox {
  class: string;
  bbox: [number, number, number, number]; // x_min, y_min, x_max, y_max
}

export interface PairView {
  image_id: string;
  source_id: string;
  condition: string;
  original_image_url: string;
  augmented_image_url: string;
  prompts: string[];
  annotations: AnnotationBox[];
}

export interface ProgressCounts {
  pending: number;
  kept: number;
  rejected_hallucination: number;
  rejected_unrealistic: number;
}

export type Progress = Record<string, ProgressCounts>;

export interface DecisionAck {
  ok: boolean;
  image_id: string;
  review_state: string;
}

/** Thrown for HTTP error statuses; network failures surface as TypeError from fetch. */
export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export class ApiClient {
  constructor(private baseUrl: string = "") {}

  private async getJson<T>(path: string): Promise<T> {
    const response = await fetch(this.baseUrl + path);
    if (!response.ok) {
      throw new ApiError(response.status, `GET ${path} -> ${response.status}`);
    }
    return (await response.json()) as T;
  }

  async nextPair(condition?: string): Promise<PairView | null> {
    const query = condition ? `?condition=${encodeURIComponent(condition)}` : "";
    const body = await this.getJson<{ pair: PairView | null }>(`/api/pairs/next${query}`);
    return body.pair;
  }

  async submitDecision(imageId: string, verdict: Verdict, reviewer: string): Promise<DecisionAck> {
    const response = await fetch(`${this.baseUrl}/api/decisions`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ image_id: imageId, verdict, reviewer }),
    });
    if (!response.ok) {
      throw new ApiError(response.status, `POST /api/decisions -> ${response.status}`);
    }
    return (await response.json()) as DecisionAck;
  }

  async progress(): Promise<Progress> {
    const body = await this.getJson<{ conditions: Progress }>("/api/progress");
    return body.conditions;
  }

  imageUrl(path: string): string {
    return this.baseUrl + path;
  }
}
