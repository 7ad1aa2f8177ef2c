// Typed client for the validation gateway.

import type {
  ConversationSummary,
  LoginResponse,
  MessagesPage,
  ChatMessage,
  SocketEvent,
  UploadResponse,
  ValidateResponse,
} from './types.js';

export class AuthError extends Error {}

export class UploadRejectedError extends Error {
  constructor(public readonly status: number, message: string) {
    super(message);
  }
}

type FetchLike = typeof fetch;

export interface BlobLike {
  name: string;
}

export class GatewayClient {
  token: string | null = null;
  userId: number | null = null;
  username: string | null = null;

  constructor(
    private readonly baseUrl: string = '',
    private readonly fetchImpl: FetchLike = fetch,
  ) {}

  private headers(): Record<string, string> {
    return this.token ? { Authorization: `Bearer ${this.token}` } : {};
  }

  private async checkAuth(resp: Response): Promise<Response> {
    if (resp.status === 401) throw new AuthError('authentication required');
    return resp;
  }

  async login(username: string): Promise<LoginResponse> {
    const resp = await this.fetchImpl(`${this.baseUrl}/api/login`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ username }),
    });
    await this.checkAuth(resp);
    const body = (await resp.json()) as LoginResponse;
    this.token = body.token;
    this.userId = body.userId;
    this.username = body.username;
    return body;
  }

  /** Both 200 and 429 carry a ValidateResponse-shaped body; transport
   *  failures reject and the caller fails closed. */
  async validateImage(file: Blob & BlobLike): Promise<ValidateResponse> {
    const form = new FormData();
    form.append('file', file, file.name);
    const resp = await this.checkAuth(
      await this.fetchImpl(`${this.baseUrl}/api/validate-image`, {
        method: 'POST',
        headers: this.headers(),
        body: form,
      }),
    );
    return (await resp.json()) as ValidateResponse;
  }

  async upload(
    file: Blob & BlobLike,
    permitToken: string,
    conversationId: string,
  ): Promise<UploadResponse> {
    const form = new FormData();
    form.append('file', file, file.name);
    form.append('permitToken', permitToken);
    form.append('conversationId', conversationId);
    const resp = await this.checkAuth(
      await this.fetchImpl(`${this.baseUrl}/api/upload`, {
        method: 'POST',
        headers: this.headers(),
        body: form,
      }),
    );
    if (!resp.ok) {
      throw new UploadRejectedError(resp.status, `upload rejected (${resp.status})`);
    }
    return (await resp.json()) as UploadResponse;
  }

  async conversations(): Promise<ConversationSummary[]> {
    const resp = await this.checkAuth(
      await this.fetchImpl(`${this.baseUrl}/api/conversations`, {
        headers: this.headers(),
      }),
    );
    return (await resp.json()) as ConversationSummary[];
  }

  async messages(conversationId: string, cursor = 0): Promise<MessagesPage> {
    const resp = await this.checkAuth(
      await this.fetchImpl(
        `${this.baseUrl}/api/conversations/${conversationId}/messages?cursor=${cursor}`,
        { headers: this.headers() },
      ),
    );
    return (await resp.json()) as MessagesPage;
  }

  async sendText(conversationId: string, body: string): Promise<ChatMessage> {
    const resp = await this.checkAuth(
      await this.fetchImpl(`${this.baseUrl}/api/messages`, {
        method: 'POST',
        headers: { ...this.headers(), 'Content-Type': 'application/json' },
        body: JSON.stringify({ conversationId, body }),
      }),
    );
    return (await resp.json()) as ChatMessage;
  }

  /** Live message feed; the caller owns reconnect policy. */
  connectSocket(onEvent: (ev: SocketEvent) => void): WebSocket {
    const scheme = this.baseUrl.startsWith('https') ? 'wss' : 'ws';
    const host = this.baseUrl.replace(/^https?:\/\//, '') || window.location.host;
    const socket = new WebSocket(`${scheme}://${host}/ws?token=${this.token}`);
    socket.onmessage = (msg) => {
      try {
        onEvent(JSON.parse(msg.data as string) as SocketEvent);
      } catch {
        // malformed server frame: ignore rather than crash the feed
      }
    };
    return socket;
  }
}
