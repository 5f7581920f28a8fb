/**
 * Literal-token extraction from raw JSON text.
 *
 * The UI must not re-format numbers the service computed: a displayed
 * score has to match the response byte-for-byte, and JS number
 * stringification differs from the server's (e.g. "3.0" vs "3").
 * This scanner walks the raw response text and records, for every
 * value, the exact source slice, addressable by a JSON-pointer-like
 * path such as "candidates/2/similarity".
 */

export type RawValues = Map<string, string>;

export function extractRawValues(text: string): RawValues {
  const out: RawValues = new Map();
  const scanner = new Scanner(text, out);
  scanner.skipWs();
  scanner.value("");
  return out;
}

class Scanner {
  private i = 0;
  constructor(private text: string, private out: RawValues) {}

  skipWs(): void {
    while (this.i < this.text.length && " \t\n\r".includes(this.text[this.i])) this.i++;
  }

  value(path: string): void {
    const start = this.i;
    const c = this.text[this.i];
    if (c === "{") {
      this.object(path);
    } else if (c === "[") {
      this.array(path);
    } else if (c === '"') {
      this.string();
      this.out.set(path, this.text.slice(start, this.i));
    } else {
      // number, true, false, null
      while (this.i < this.text.length && !",}] \t\n\r".includes(this.text[this.i])) this.i++;
      this.out.set(path, this.text.slice(start, this.i));
    }
  }

  private object(path: string): void {
    this.i++; // {
    this.skipWs();
    if (this.text[this.i] === "}") {
      this.i++;
      return;
    }
    for (;;) {
      this.skipWs();
      const key = this.parseStringToken();
      this.skipWs();
      if (this.text[this.i] !== ":") throw new Error(`expected ':' at ${this.i}`);
      this.i++;
      this.skipWs();
      this.value(path === "" ? key : `${path}/${key}`);
      this.skipWs();
      if (this.text[this.i] === ",") {
        this.i++;
        continue;
      }
      if (this.text[this.i] === "}") {
        this.i++;
        return;
      }
      throw new Error(`expected ',' or '}' at ${this.i}`);
    }
  }

  private array(path: string): void {
    this.i++; // [
    this.skipWs();
    if (this.text[this.i] === "]") {
      this.i++;
      return;
    }
    let index = 0;
    for (;;) {
      this.skipWs();
      this.value(`${path}/${index}`);
      index++;
      this.skipWs();
      if (this.text[this.i] === ",") {
        this.i++;
        continue;
      }
      if (this.text[this.i] === "]") {
        this.i++;
        return;
      }
      throw new Error(`expected ',' or ']' at ${this.i}`);
    }
  }

  private string(): void {
    this.i++; // opening quote
    while (this.i < this.text.length) {
      const c = this.text[this.i];
      if (c === "\\") {
        this.i += 2;
        continue;
      }
      this.i++;
      if (c === '"') return;
    }
    throw new Error("unterminated string");
  }

  private parseStringToken(): string {
    if (this.text[this.i] !== '"') throw new Error(`expected string key at ${this.i}`);
    const start = this.i;
    this.string();
    return JSON.parse(this.text.slice(start, this.i)) as string;
  }
}
