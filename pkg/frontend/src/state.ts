/** Review queue store: pending items, paging, and decision actions.
 *
 * Region edits are validated against the image bounds before any network
 * call; an out-of-bounds box never leaves the browser.
 */

import { Client, ListOptions, ReviewItem, ReviewKindName, ApplyResult } from "./api.js";
import { validateBox, boxFromPayload } from "./boxedit.js";

/** Rejected before reaching the server. */
export class ClientValidationError extends Error {
  constructor(readonly problems: string[]) {
    super(problems.join("; "));
    this.name = "ClientValidationError";
  }
}

/** Bounds problems for a region payload ({box, width, height}); [] when fine. */
export function validateRegionPayload(payload: Record<string, unknown>): string[] {
  const box = boxFromPayload(payload);
  if (!box) return ["payload needs box: [x, y, w, h]"];
  const width = Number(payload.width);
  const height = Number(payload.height);
  if (!Number.isFinite(width) || !Number.isFinite(height)) {
    return ["payload needs numeric image width and height"];
  }
  const problems = validateBox(box, width, height);
  if (!String(payload.label ?? "").trim()) {
    problems.push("payload needs a label");
  }
  return problems;
}

export class QueueStore {
  private items_: ReviewItem[] = [];
  private total_ = 0;
  private listeners = new Set<() => void>();
  page = 1;
  pageSize = 50;
  kind: ReviewKindName | undefined;
  reviewer = "";

  constructor(private readonly client: Client) {}

  get items(): readonly ReviewItem[] {
    return this.items_;
  }

  /** Pending count across all pages, as last reported by the server. */
  get total(): number {
    return this.total_;
  }

  subscribe(listener: () => void): () => void {
    this.listeners.add(listener);
    return () => this.listeners.delete(listener);
  }

  private emit(): void {
    for (const listener of this.listeners) listener();
  }

  async load(page = this.page): Promise<void> {
    const options: ListOptions = { page, pageSize: this.pageSize };
    if (this.kind) options.kind = this.kind;
    const result = await this.client.listReview(options);
    this.items_ = result.items;
    this.total_ = result.total;
    this.page = result.page;
    this.emit();
  }

  find(itemId: string): ReviewItem | undefined {
    return this.items_.find((item) => item.id === itemId);
  }

  async approve(itemId: string): Promise<void> {
    await this.client.decide(itemId, "approve", { reviewer: this.reviewer });
    this.drop(itemId);
  }

  async reject(itemId: string): Promise<void> {
    await this.client.decide(itemId, "reject", { reviewer: this.reviewer });
    this.drop(itemId);
  }

  /**
   * Submits a corrected payload. Region edits that leave the image are
   * refused here with ClientValidationError; the server enforces the same
   * rule with InvalidEdit for anyone bypassing the UI.
   */
  async edit(itemId: string, payload: Record<string, unknown>): Promise<void> {
    const item = this.find(itemId);
    const isRegion = item ? item.kind === "region" : "box" in payload;
    if (isRegion) {
      const problems = validateRegionPayload(payload);
      if (problems.length > 0) {
        throw new ClientValidationError(problems);
      }
    }
    await this.client.decide(itemId, "edit", {
      reviewer: this.reviewer, payload,
    });
    this.drop(itemId);
  }

  applyAll(): Promise<ApplyResult> {
    return this.client.apply();
  }

  private drop(itemId: string): void {
    const before = this.items_.length;
    this.items_ = this.items_.filter((item) => item.id !== itemId);
    if (this.items_.length < before && this.total_ > 0) {
      this.total_ -= 1;
    }
    this.emit();
  }
}
