/** Typed fetch client for the reflex-agent service. */

import type {
  EventsResponse,
  PreferenceResponse,
  RefineResponse,
  RoundResponse,
  SchemaInfo,
  SessionView,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export interface NewSessionRequest {
  schema?: string;
  persona?: string | null;
  mode?: "toy" | "remote";
  seed?: number;
}

export type RefineRequest =
  | { tool: "dpo"; params?: Record<string, number> }
  | { tool: "aae"; params?: { threshold?: number; max_iterations?: number; neglect_prob?: number } };

export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: typeof fetch = fetch,
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await this.fetchFn(`${this.baseUrl}${path}`, {
      method,
      headers: body === undefined ? undefined : { "content-type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!response.ok) {
      let code = `HTTP${response.status}`;
      let message = response.statusText;
      try {
        const parsed = (await response.json()) as { detail?: { code?: string; message?: string } };
        if (parsed.detail?.code) code = parsed.detail.code;
        if (parsed.detail?.message) message = parsed.detail.message;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(response.status, code, message);
    }
    return (await response.json()) as T;
  }

  async listSchemas(): Promise<SchemaInfo[]> {
    const body = await this.request<{ schemas: SchemaInfo[] }>("GET", "/schema");
    return body.schemas;
  }

  createSession(req: NewSessionRequest): Promise<SessionView> {
    return this.request("POST", "/sessions", req);
  }

  getSession(id: string): Promise<SessionView> {
    return this.request("GET", `/sessions/${id}`);
  }

  closeSession(id: string): Promise<SessionView> {
    return this.request("DELETE", `/sessions/${id}`);
  }

  /** One reflection round. Toy mode accepts `Aspect=value` text or a mapping. */
  sendMessage(id: string, words: string | Record<string, string>): Promise<RoundResponse> {
    const body = typeof words === "string" ? { text: words } : { assignment: words };
    return this.request("POST", `/sessions/${id}/message`, body);
  }

  sendPreference(id: string, winnerRound: number, loserRound: number): Promise<PreferenceResponse> {
    return this.request("POST", `/sessions/${id}/preference`, {
      winner_round: winnerRound,
      loser_round: loserRound,
    });
  }

  refine(id: string, req: RefineRequest): Promise<RefineResponse> {
    return this.request("POST", `/sessions/${id}/refine`, req);
  }

  /** Long-polls when timeoutMs > 0; returns immediately otherwise. */
  events(id: string, since: number, timeoutMs = 0): Promise<EventsResponse> {
    return this.request("GET", `/sessions/${id}/events?since=${since}&timeout_ms=${timeoutMs}`);
  }

  imageUrl(sha256: string): string {
    return `${this.baseUrl}/images/${sha256}`;
  }
}
