/** Typed client for the review service HTTP API.
 *
 * Every JSON response carries a format_version; the client refuses payloads
 * from a different major so a stale UI fails loudly instead of corrupting
 * reviews. Image requests use the ?token= query fallback because <img> tags
 * cannot send headers.
 */

export const SUPPORTED_FORMAT_VERSION = 1;

export type ReviewKindName = "triplet" | "region" | "merge";
export type DecisionName = "approve" | "reject" | "edit";

export interface ReviewItem {
  id: string;
  kind: ReviewKindName;
  payload: Record<string, unknown>;
  state: string;
  decided_by: string | null;
  decided_at: string | null;
  edited_payload: Record<string, unknown> | null;
}

export interface ReviewPage {
  format_version: number;
  items: ReviewItem[];
  total: number;
  page: number;
  page_size: number;
}

export interface DecisionResult {
  format_version: number;
  item: ReviewItem;
}

export interface ApplyResult {
  format_version: number;
  applied: Record<string, number>;
  skipped: number;
  checksum: string;
}

export interface SubgraphEntity {
  id: string;
  label: string;
  kind: string;
  groundings: number;
}

export interface SubgraphTriplet {
  id: string;
  head: string;
  relation: string;
  tail: string;
  visual: boolean;
}

export interface Subgraph {
  format_version: number;
  root: string;
  label: string;
  hops: number;
  entities: SubgraphEntity[];
  triplets: SubgraphTriplet[];
}

/** Non-2xx response; `code` is the server's error name, e.g. "InvalidEdit". */
export class ApiError extends Error {
  constructor(readonly status: number, readonly code: string, message: string) {
    super(message);
    this.name = "ApiError";
  }
}

export class FormatVersionError extends Error {
  constructor(got: unknown) {
    super(`server speaks format_version ${String(got)}, ` +
      `this UI needs ${SUPPORTED_FORMAT_VERSION}`);
    this.name = "FormatVersionError";
  }
}

export interface ListOptions {
  kind?: ReviewKindName;
  page?: number;
  pageSize?: number;
}

export class Client {
  private readonly fetchImpl: typeof fetch;

  constructor(readonly baseUrl: string, readonly token: string,
              fetchImpl?: typeof fetch) {
    this.fetchImpl = fetchImpl ?? fetch.bind(globalThis);
  }

  private async request<T extends { format_version: number }>(
      path: string, init: RequestInit = {}): Promise<T> {
    const resp = await this.fetchImpl(this.baseUrl + path, {
      ...init,
      headers: {
        ...(init.body ? { "Content-Type": "application/json" } : {}),
        Authorization: `Bearer ${this.token}`,
        ...(init.headers ?? {}),
      },
    });
    let body: unknown = null;
    try {
      body = await resp.json();
    } catch {
      body = null;
    }
    if (!resp.ok) {
      const rec = (body ?? {}) as Record<string, unknown>;
      const code = typeof rec.error === "string" ? rec.error
        : typeof rec.detail === "string" ? rec.detail : `http_${resp.status}`;
      const message = typeof rec.message === "string" ? rec.message : code;
      throw new ApiError(resp.status, code, message);
    }
    const versioned = body as T | null;
    if (!versioned || versioned.format_version !== SUPPORTED_FORMAT_VERSION) {
      throw new FormatVersionError(versioned?.format_version);
    }
    return versioned;
  }

  listReview(options: ListOptions = {}): Promise<ReviewPage> {
    const params = new URLSearchParams();
    if (options.kind) params.set("kind", options.kind);
    if (options.page) params.set("page", String(options.page));
    if (options.pageSize) params.set("page_size", String(options.pageSize));
    const qs = params.toString();
    return this.request<ReviewPage>(`/api/review${qs ? `?${qs}` : ""}`);
  }

  decide(itemId: string, decision: DecisionName,
         options: { reviewer?: string; payload?: Record<string, unknown> } = {},
  ): Promise<DecisionResult> {
    return this.request<DecisionResult>(
      `/api/review/${encodeURIComponent(itemId)}/decision`, {
        method: "POST",
        body: JSON.stringify({
          decision,
          reviewer: options.reviewer ?? "",
          payload: options.payload ?? null,
        }),
      });
  }

  apply(): Promise<ApplyResult> {
    return this.request<ApplyResult>("/api/apply", { method: "POST" });
  }

  subgraph(label: string, hops = 2): Promise<Subgraph> {
    return this.request<Subgraph>(
      `/api/categories/${encodeURIComponent(label)}/subgraph?hops=${hops}`);
  }

  imageUrl(imageId: string): string {
    const token = encodeURIComponent(this.token);
    return `${this.baseUrl}/api/images/${encodeURIComponent(imageId)}?token=${token}`;
  }
}
