import type { ConverseResponse } from "./types.js";

declare global {
  // eslint-disable-next-line no-var
  var C2CRS_API_BASE: string | undefined;
}

/** Base URL resolution: ?api= query param, then the build/env-style
 *  global, then the local dev default. */
export function resolveBaseUrl(): string {
  if (typeof window !== "undefined" && window.location?.search) {
    const fromQuery = new URLSearchParams(window.location.search).get("api");
    if (fromQuery) return fromQuery.replace(/\/$/, "");
  }
  if (typeof globalThis.C2CRS_API_BASE === "string") {
    return globalThis.C2CRS_API_BASE.replace(/\/$/, "");
  }
  return "http://127.0.0.1:8080";
}

export class ApiError extends Error {
  constructor(message: string, readonly status?: number) {
    super(message);
  }
}

export class ChatClient {
  constructor(private readonly baseUrl: string = resolveBaseUrl()) {}

  private async post<T>(path: string, body: unknown): Promise<T> {
    let res: Response;
    try {
      res = await fetch(`${this.baseUrl}${path}`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(body),
      });
    } catch (err) {
      throw new ApiError(`network error: ${String(err)}`);
    }
    if (!res.ok) {
      let detail = res.statusText;
      try {
        const payload = (await res.json()) as { detail?: string };
        if (payload.detail) detail = payload.detail;
      } catch {
        // non-JSON error body
      }
      throw new ApiError(`server error ${res.status}: ${detail}`, res.status);
    }
    return (await res.json()) as T;
  }

  converse(sessionId: string, utterance: string, k: number): Promise<ConverseResponse> {
    return this.post<ConverseResponse>("/api/converse", {
      session_id: sessionId,
      utterance,
      k,
    });
  }

  async reset(sessionId: string): Promise<void> {
    await this.post<{ status: string }>("/api/reset", { session_id: sessionId });
  }
}
