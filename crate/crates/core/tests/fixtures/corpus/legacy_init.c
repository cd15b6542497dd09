#include <openssl/evp.h>

int setup(void)
{
    OpenSSL_add_all_digests();
    return 0;
}
