// JSON client for the serve endpoints. The fetch implementation is injectable
// so tests can record every outgoing request and prove nothing sensitive
// leaves the client.

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export interface ClusterNode {
  name: string;
  cloud: string;
  csp: string;
  role: string;
  fragments: number;
}

export interface ClusterView {
  csps: string[];
  clouds: Record<string, string>;
  nodes: ClusterNode[];
  database: string;
}

export interface CodetableSymbol {
  symbol: string;
  usage: number;
  bits: number;
}

export interface CodetableView {
  symbols: CodetableSymbol[];
  entries: number;
}

export class ApiError extends Error {
  constructor(public status: number, message: string, public position?: number) {
    super(message);
  }
}

async function parseError(resp: Response): Promise<ApiError> {
  let message = `HTTP ${resp.status}`;
  let position: number | undefined;
  try {
    const body = await resp.json();
    if (body && typeof body.error === "string") message = body.error;
    if (body && typeof body.position === "number") position = body.position;
  } catch {
    // non-JSON error body; keep the status text
  }
  return new ApiError(resp.status, message, position);
}

export class ApiClient {
  constructor(private baseUrl: string,
              private fetchImpl: FetchLike = (url, init) => fetch(url, init)) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  private async getJson<T>(path: string): Promise<T> {
    const resp = await this.fetchImpl(`${this.baseUrl}${path}`);
    if (!resp.ok) throw await parseError(resp);
    return resp.json() as Promise<T>;
  }

  private async postJson<T>(path: string, payload: unknown): Promise<T> {
    const resp = await this.fetchImpl(`${this.baseUrl}${path}`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
    });
    if (!resp.ok) throw await parseError(resp);
    return resp.json() as Promise<T>;
  }

  /** Submit a query; the response carries only the encrypted answer. */
  async postQuery(text: string, mode?: string): Promise<string> {
    const payload: Record<string, string> = { text };
    if (mode) payload.mode = mode;
    const body = await this.postJson<{ answer: string }>("/query", payload);
    return body.answer;
  }

  getCluster(): Promise<ClusterView> {
    return this.getJson<ClusterView>("/cluster");
  }

  getCodetable(): Promise<CodetableView> {
    return this.getJson<CodetableView>("/codetable");
  }

  postRebalance(action: "add" | "remove", node: string,
                cloud?: string): Promise<ClusterView> {
    const payload: Record<string, string> = { action, node };
    if (cloud) payload.cloud = cloud;
    return this.postJson<ClusterView>("/rebalance", payload);
  }
}
