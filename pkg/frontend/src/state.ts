import { ApiError, ChatClient } from "./api.js";
import type { ChatTurn } from "./types.js";

function newSessionId(): string {
  return `web-${Date.now().toString(36)}-${Math.random().toString(36).slice(2, 8)}`;
}

export interface ChatState {
  sessionId: string;
  turns: ChatTurn[];
  inFlight: boolean;
  error: string | null;
  lastUtterance: string | null;
  k: number;
}

export type Listener = (state: ChatState) => void;

/** Transcript and request state. At most one converse is in flight; a
 *  reply is discarded if the session was reset while it was pending. */
export class ChatStore {
  private state: ChatState = {
    sessionId: newSessionId(),
    turns: [],
    inFlight: false,
    error: null,
    lastUtterance: null,
    k: 10,
  };

  private listeners: Listener[] = [];

  constructor(private readonly client: ChatClient) {}

  get snapshot(): ChatState {
    return this.state;
  }

  subscribe(listener: Listener): void {
    this.listeners.push(listener);
    listener(this.state);
  }

  private update(patch: Partial<ChatState>): void {
    this.state = { ...this.state, ...patch };
    for (const listener of this.listeners) listener(this.state);
  }

  setK(k: number): void {
    this.update({ k });
  }

  async send(text: string): Promise<void> {
    const utterance = text.trim();
    if (!utterance || this.state.inFlight) return;
    const sessionAtSend = this.state.sessionId;
    this.update({
      inFlight: true,
      error: null,
      lastUtterance: utterance,
      turns: [...this.state.turns,
              { role: "user", text: utterance, recommendations: [] }],
    });
    try {
      const reply = await this.client.converse(sessionAtSend, utterance,
                                               this.state.k);
      if (this.state.sessionId !== sessionAtSend) return; // reset during flight
      this.update({
        inFlight: false,
        turns: [...this.state.turns, {
          role: "system",
          text: reply.response,
          recommendations: reply.recommendations,
        }],
      });
    } catch (err) {
      if (this.state.sessionId !== sessionAtSend) return;
      const message = err instanceof ApiError ? err.message : String(err);
      this.update({ inFlight: false, error: message });
    }
  }

  async retry(): Promise<void> {
    const utterance = this.state.lastUtterance;
    if (!utterance || this.state.inFlight) return;
    // drop the failed user bubble so the retried turn is not duplicated
    const turns = [...this.state.turns];
    if (turns.length && turns[turns.length - 1]?.role === "user") {
      turns.pop();
    }
    this.update({ turns, error: null });
    await this.send(utterance);
  }

  async reset(): Promise<void> {
    const oldSession = this.state.sessionId;
    this.update({
      sessionId: newSessionId(),
      turns: [],
      inFlight: false,
      error: null,
      lastUtterance: null,
    });
    try {
      await this.client.reset(oldSession);
    } catch {
      // non-fatal: the server evicts idle sessions on its own
    }
  }
}
