// placeholder: implementation follows
namespace expredit { namespace { int unused_cli = 0; } }
