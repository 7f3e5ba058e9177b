import { describe, expect, it } from "vitest";

import { ApiError, Client, FormatVersionError } from "../src/api.js";

type Call = { url: string; init: RequestInit | undefined };

function fakeFetch(status: number, body: unknown) {
  const calls: Call[] = [];
  const impl = async (input: string | URL | Request, init?: RequestInit) => {
    calls.push({ url: String(input), init });
    return new Response(JSON.stringify(body), {
      status,
      headers: { "Content-Type": "application/json" },
    });
  };
  return { calls, impl };
}

const page = {
  format_version: 1,
  items: [],
  total: 0,
  page: 1,
  page_size: 50,
};

describe("Client", () => {
  it("sends the bearer token on every request", async () => {
    const { calls, impl } = fakeFetch(200, page);
    const client = new Client("http://h", "sekrit", impl);
    await client.listReview({});
    const headers = new Headers(calls[0]!.init?.headers);
    expect(headers.get("authorization")).toBe("Bearer sekrit");
  });

  it("encodes kind and paging as query parameters", async () => {
    const { calls, impl } = fakeFetch(200, page);
    const client = new Client("http://h", "t", impl);
    await client.listReview({ kind: "region", page: 3, pageSize: 10 });
    const url = new URL(calls[0]!.url);
    expect(url.pathname).toBe("/api/review");
    expect(url.searchParams.get("kind")).toBe("region");
    expect(url.searchParams.get("page")).toBe("3");
    expect(url.searchParams.get("page_size")).toBe("10");
  });

  it("posts decisions with a JSON body", async () => {
    const { calls, impl } = fakeFetch(200, {
      format_version: 1,
      item: { id: "i1" },
    });
    const client = new Client("http://h", "t", impl);
    await client.decide("i1", "approve", { reviewer: "pat" });
    const call = calls[0]!;
    expect(call.url).toBe("http://h/api/review/i1/decision");
    expect(call.init?.method).toBe("POST");
    expect(JSON.parse(String(call.init?.body))).toEqual({
      decision: "approve",
      reviewer: "pat",
      payload: null,
    });
    const headers = new Headers(call.init?.headers);
    expect(headers.get("content-type")).toBe("application/json");
  });

  it("raises ApiError with the server error code", async () => {
    const { impl } = fakeFetch(422, {
      format_version: 1,
      error: "InvalidEdit",
      message: "box leaves the image",
    });
    const client = new Client("http://h", "t", impl);
    const err = await client.decide("i1", "edit", {}).catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.status).toBe(422);
    expect(err.code).toBe("InvalidEdit");
    expect(err.message).toContain("box leaves the image");
  });

  it("falls back to an http_<status> code when the body is bare", async () => {
    const { impl } = fakeFetch(500, {});
    const client = new Client("http://h", "t", impl);
    const err = await client.apply().catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.code).toBe("http_500");
  });

  it("rejects responses with an unknown format version", async () => {
    const { impl } = fakeFetch(200, { ...page, format_version: 2 });
    const client = new Client("http://h", "t", impl);
    const err = await client.listReview({}).catch((e) => e);
    expect(err).toBeInstanceOf(FormatVersionError);
  });

  it("builds image urls with the token in the query", () => {
    const client = new Client("http://h", "a b", async () => new Response());
    expect(client.imageUrl("img-1")).toBe(
      "http://h/api/images/img-1?token=a%20b",
    );
  });

  it("requests subgraphs with a hop count", async () => {
    const { calls, impl } = fakeFetch(200, {
      format_version: 1,
      root: "e1",
      label: "zebra",
      hops: 3,
      entities: [],
      triplets: [],
    });
    const client = new Client("http://h", "t", impl);
    const sub = await client.subgraph("zebra", 3);
    expect(sub.hops).toBe(3);
    const url = new URL(calls[0]!.url);
    expect(url.pathname).toBe("/api/categories/zebra/subgraph");
    expect(url.searchParams.get("hops")).toBe("3");
  });
});
